"""Mixture-density heads: bivariate Gaussian mixtures, Bernoulli and
ternary pen-state distributions, their log-masses and temperature samplers.

Raw head outputs are unconstrained floats; ``gmm_from_raw`` maps them
through softmax/exp/tanh so every parameter set is valid by construction.
Log-densities run on the autodiff tape (log-sum-exp throughout); samplers
are plain numpy driven by a caller-supplied Generator.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DegenerateDataError, DimensionError

LOG_TWO_PI = float(np.log(2.0 * np.pi))
SIGMA_FLOOR = 1e-4


class PenState(IntEnum):
    CONTINUE = 0
    END_STROKE = 1
    END_DRAWING = 2


class GmmParams:
    """Bivariate Gaussian mixture parameters, batched along the first axis.

    Component tensors have shape (N, K).  Invariants (weights sum to one,
    positive sigmas, correlations inside the open unit interval) are
    checked at construction.
    """

    def __init__(self, pi: Tensor, mu_x: Tensor, mu_y: Tensor, sigma_x: Tensor, sigma_y: Tensor, rho: Tensor):
        self.pi, self.mu_x, self.mu_y = pi, mu_x, mu_y
        self.sigma_x, self.sigma_y, self.rho = sigma_x, sigma_y, rho
        shapes = {t.data.shape for t in (pi, mu_x, mu_y, sigma_x, sigma_y, rho)}
        if len(shapes) != 1 or pi.data.ndim != 2:
            raise DimensionError(f"mixture component tensors must share one (N, K) shape, got {shapes}")
        self.validate()

    @property
    def batch(self) -> int:
        return self.pi.data.shape[0]

    @property
    def n_components(self) -> int:
        return self.pi.data.shape[1]

    def validate(self) -> None:
        pi = self.pi.data
        if not np.all(np.isfinite(pi)) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-6):
            raise ConfigError("mixture weights must be finite and sum to 1 within 1e-6")
        if np.any(self.sigma_x.data <= 0.0) or np.any(self.sigma_y.data <= 0.0):
            raise ConfigError("mixture sigmas must be positive")
        if np.any(np.abs(self.rho.data) >= 1.0):
            raise ConfigError("mixture correlations must lie in (-1, 1)")

    # numpy views for samplers and reports
    @property
    def weights(self) -> np.ndarray:
        return self.pi.data

    @property
    def means(self) -> np.ndarray:
        return np.stack([self.mu_x.data, self.mu_y.data], axis=-1)

    @property
    def sigmas(self) -> np.ndarray:
        return np.stack([self.sigma_x.data, self.sigma_y.data], axis=-1)

    @property
    def correlations(self) -> np.ndarray:
        return self.rho.data

    def row(self, i: int) -> "GmmParams":
        sl = slice(i, i + 1)
        return GmmParams(
            self.pi[sl], self.mu_x[sl], self.mu_y[sl], self.sigma_x[sl], self.sigma_y[sl], self.rho[sl]
        )


def gmm_from_raw(raw) -> GmmParams:
    """Constrain raw head outputs, laid out per row as
    [K pi-logits | K mu_x | K mu_y | K log sigma_x | K log sigma_y | K rho-raw].

    Sigmas are floored at 1e-4 after exp so early training cannot produce
    degenerate densities.
    """
    raw = ad.as_tensor(raw)
    if raw.data.ndim == 1:
        raw = ad.reshape(raw, (1, -1))
    if raw.data.ndim != 2 or raw.data.shape[1] % 6 != 0 or raw.data.shape[1] == 0:
        raise DimensionError(f"raw mixture output must have 6K columns, got shape {raw.data.shape}")
    if not np.all(np.isfinite(raw.data)):
        raise DegenerateDataError("mixture head produced non-finite raw outputs")
    k = raw.data.shape[1] // 6
    cols = [raw[:, i * k : (i + 1) * k] for i in range(6)]
    return GmmParams(
        pi=ad.softmax(cols[0], axis=1),
        mu_x=cols[1],
        mu_y=cols[2],
        sigma_x=ad.clip_min(ad.exp(cols[3]), SIGMA_FLOOR),
        sigma_y=ad.clip_min(ad.exp(cols[4]), SIGMA_FLOOR),
        rho=ad.tanh(cols[5]),
    )


def gmm_log_prob(params: GmmParams, x) -> Tensor:
    """Log-density of points under the mixture, shape (N,).

    Uses the bivariate normal in its correlation form with log-sum-exp
    over components; differentiable w.r.t. both parameters and x.
    """
    x = ad.as_tensor(x)
    squeeze = x.data.ndim == 1
    if (squeeze and x.data.shape != (2,)) or (not squeeze and (x.data.ndim != 2 or x.data.shape[1] != 2)):
        raise DimensionError(f"x must be (N, 2) or (2,), got {x.data.shape}")
    if squeeze:
        x = ad.reshape(x, (1, 2))
    if x.data.shape[0] != params.batch and params.batch != 1:
        raise DimensionError(
            f"batch mismatch: {x.data.shape[0]} points vs {params.batch} parameter rows"
        )
    dx = ad.div(ad.sub(x[:, 0:1], params.mu_x), params.sigma_x)
    dy = ad.div(ad.sub(x[:, 1:2], params.mu_y), params.sigma_y)
    one_minus_r2 = ad.sub(1.0, ad.mul(params.rho, params.rho))
    z = ad.sub(ad.add(ad.mul(dx, dx), ad.mul(dy, dy)), 2.0 * ad.mul(params.rho, ad.mul(dx, dy)))
    log_norm = (
        -LOG_TWO_PI
        - ad.log(params.sigma_x)
        - ad.log(params.sigma_y)
        - 0.5 * ad.log(one_minus_r2)
    )
    comp = ad.log(params.pi) + log_norm - ad.div(z, 2.0 * one_minus_r2)
    out = ad.logsumexp(comp, axis=1)
    return ad.reshape(out, ()) if squeeze else out


def gmm_sample(params: GmmParams, temperature: float, rng: np.random.Generator) -> np.ndarray:
    """One draw: component from tempered weights, then a bivariate normal
    whose covariance is scaled by the temperature (sigma times sqrt T)."""
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if params.batch != 1:
        raise DimensionError(f"gmm_sample expects a single parameter row, got batch {params.batch}")
    log_pi = np.log(params.weights[0]) / temperature
    p = np.exp(log_pi - log_pi.max())
    p /= p.sum()
    k = int(rng.choice(params.n_components, p=p))
    z1, z2 = rng.standard_normal(2)
    root_t = np.sqrt(temperature)
    sx = params.sigma_x.data[0, k] * root_t
    sy = params.sigma_y.data[0, k] * root_t
    r = params.rho.data[0, k]
    x = params.mu_x.data[0, k] + sx * z1
    y = params.mu_y.data[0, k] + sy * (r * z1 + np.sqrt(1.0 - r * r) * z2)
    return np.array([x, y])


# -- Bernoulli ---------------------------------------------------------------


def bernoulli_log_prob(p, outcome: bool) -> Tensor:
    """Log-mass of a Bernoulli given its probability tensor.

    An observed zero-probability event would be -inf, which is treated as
    an error because it poisons training sums.
    """
    p = ad.as_tensor(p)
    value = float(p.data) if p.data.size == 1 else None
    if value is not None and ((outcome and value == 0.0) or (not outcome and value == 1.0)):
        raise DegenerateDataError("observed event has probability zero")
    return ad.log(p) if outcome else ad.log(ad.sub(1.0, p))


def bernoulli_logit_log_prob(logit, outcome: bool) -> Tensor:
    """Numerically stable Bernoulli log-mass from a logit."""
    logit = ad.as_tensor(logit)
    return ad.neg(ad.softplus(ad.neg(logit))) if outcome else ad.neg(ad.softplus(logit))


def bernoulli_sample(p: float, temperature: float, rng: np.random.Generator) -> bool:
    """Tempered Bernoulli draw: logit divided by temperature."""
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    p = float(np.clip(p, 1e-12, 1.0 - 1e-12))
    logit = np.clip(np.log(p / (1.0 - p)) / temperature, -500.0, 500.0)
    p_t = 1.0 / (1.0 + np.exp(-logit))
    return bool(rng.random() < p_t)


# -- categorical over pen states ------------------------------------------------


def categorical_log_prob(logits, index: int) -> Tensor:
    """Log-mass of class ``index`` under softmax(logits)."""
    logits = ad.as_tensor(logits)
    if logits.data.ndim != 1:
        raise DimensionError(f"logits must be 1-d, got {logits.data.shape}")
    if not 0 <= index < logits.data.shape[0]:
        raise ConfigError(f"class index {index} out of range for {logits.data.shape[0]} classes")
    return ad.log_softmax(logits, axis=0)[index]


def categorical3_log_prob(logits, state: int) -> Tensor:
    """Pen-state log-mass; states are {0 continue, 1 end stroke, 2 end drawing}."""
    state = int(state)
    if state not in (0, 1, 2):
        raise ConfigError(f"pen state must be 0, 1, or 2, got {state}")
    if ad.as_tensor(logits).data.shape != (3,):
        raise DimensionError("pen-state logits must have shape (3,)")
    return categorical_log_prob(logits, state)


def categorical_sample(logits: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    """Tempered categorical draw: logits divided by temperature."""
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    p = np.exp(scaled - scaled.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))
