"""Trainable parameters and the layer vocabulary built from tensor ops.

Layers are thin: each owns named ``Parameter`` objects registered in a
``ParameterStore`` and composes primitives from ``tensor``; gradients come
from the tape, never from layer-specific math.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from . import tensor as T
from .tensor import Tensor


class Parameter:
    """A named tensor; non-trainable ones hold state such as running stats."""

    def __init__(self, name: str, data: np.ndarray, trainable: bool = True):
        self.name = name
        self.trainable = trainable
        self.tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=trainable)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.tensor.data.shape:
            raise DimensionError(
                f"parameter {self.name}: cannot load shape {value.shape} into {self.tensor.data.shape}"
            )
        self.tensor.data = value

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape}, trainable={self.trainable})"


class ParameterStore:
    """Ordered, name-unique registry of a model's parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data, trainable=trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> list[tuple[str, Parameter]]:
        return list(self._params.items())

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise DimensionError(
                f"parameter name mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}"
            )
        for name, p in self._params.items():
            p.data = arrays[name]

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()


# -- initializers ---------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


ACTIVATIONS = {
    "none": lambda x: x,
    "tanh": T.tanh,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "elu": T.elu,
}


def dense(x, weights, bias, activation: str = "none") -> Tensor:
    """Affine map with optional nonlinearity; x is (N, D_in)."""
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}, expected one of {sorted(ACTIVATIONS)}")
    return ACTIVATIONS[activation](T.add(T.matmul(x, weights), bias))


class Dense:
    def __init__(
        self,
        store: ParameterStore,
        name: str,
        n_in: int,
        n_out: int,
        activation: str = "none",
        rng: np.random.Generator | None = None,
    ):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.activation = activation
        self.w = store.add(f"{name}.w", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.b = store.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x) -> Tensor:
        return dense(x, self.w.tensor, self.b.tensor, self.activation)


# -- batch normalization ----------------------------------------------------------


def batchnorm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    mode: str,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over the batch (and spatial) axes.

    Train mode normalizes with batch statistics and folds them into the
    running buffers in place; unbiased variance needs N >= 2, so a
    single-sample train batch is an error.  Eval mode uses the running
    buffers only.
    """
    x = T.as_tensor(x)
    if x.data.ndim not in (2, 4):
        raise DimensionError(f"batchnorm expects (N,C) or (N,C,H,W), got {x.data.shape}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    cshape = (1, x.data.shape[1]) if x.data.ndim == 2 else (1, x.data.shape[1], 1, 1)
    gamma_r = T.reshape(gamma, cshape)
    beta_r = T.reshape(beta, cshape)
    if mode == "train":
        if x.data.shape[0] < 2:
            raise DimensionError("batchnorm train mode needs a batch of at least 2 samples")
        mu = T.tmean(x, axis=axes, keepdims=True)
        centered = T.sub(x, mu)
        var = T.tmean(T.mul(centered, centered), axis=axes, keepdims=True)
        n = int(np.prod([x.data.shape[ax] for ax in axes]))
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * mu.data.reshape(-1)
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * (
            var.data.reshape(-1) * n / (n - 1)
        )
        xhat = T.div(centered, T.power(T.add(var, eps), 0.5))
    else:
        rm = T.reshape(running_mean, cshape)
        rv = T.reshape(running_var, cshape)
        xhat = T.div(T.sub(x, rm), T.power(T.add(rv, eps), 0.5))
    return T.add(T.mul(xhat, gamma_r), beta_r)


class BatchNorm:
    """Batch normalization layer owning scale, shift, and running buffers.

    When asked to train on a single-sample batch it falls back to the
    running statistics, since batch variance is undefined there; the
    functional op keeps its strict contract.
    """

    def __init__(self, store: ParameterStore, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = store.add(f"{name}.running_mean", np.zeros(channels), trainable=False)
        self.running_var = store.add(f"{name}.running_var", np.ones(channels), trainable=False)

    def __call__(self, x, mode: str) -> Tensor:
        x = T.as_tensor(x)
        if mode == "train" and x.data.shape[0] < 2:
            mode = "eval"
        return batchnorm(
            x,
            self.gamma.tensor,
            self.beta.tensor,
            self.running_mean.tensor,
            self.running_var.tensor,
            mode,
            momentum=self.momentum,
            eps=self.eps,
        )


# -- recurrent cells ---------------------------------------------------------------


def lstm_cell(x, h, c, w_x, w_h, b) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (input, forget, cell, output).

    All of x, h, c are (N, D) row batches; weights project to 4 stacked gates.
    """
    z = T.add(T.add(T.matmul(x, w_x), T.matmul(h, w_h)), b)
    u = z.data.shape[1] // 4
    i = T.sigmoid(z[:, 0 * u : 1 * u])
    f = T.sigmoid(z[:, 1 * u : 2 * u])
    g = T.tanh(z[:, 2 * u : 3 * u])
    o = T.sigmoid(z[:, 3 * u : 4 * u])
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


class LSTMLayer:
    """Single LSTM layer; state is a pair of (N, units) tensors."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, units: int, rng: np.random.Generator):
        self.units = units
        self.w_x = store.add(f"{name}.w_x", glorot_uniform(rng, (n_in, 4 * units), n_in, 4 * units))
        self.w_h = store.add(f"{name}.w_h", glorot_uniform(rng, (units, 4 * units), units, 4 * units))
        bias = np.zeros(4 * units)
        bias[units : 2 * units] = 1.0  # forget gate opens at init
        self.b = store.add(f"{name}.b", bias)

    def initial_state(self, batch: int = 1) -> tuple[Tensor, Tensor]:
        return Tensor(np.zeros((batch, self.units))), Tensor(np.zeros((batch, self.units)))

    def step(self, x, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        return lstm_cell(x, h, c, self.w_x.tensor, self.w_h.tensor, self.b.tensor)


class LSTMStack:
    """L stacked LSTM layers; the top layer's hidden state is the output."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, units: int, layers: int, rng: np.random.Generator):
        if layers < 1:
            raise ConfigError(f"lstm stack needs at least 1 layer, got {layers}")
        self.layers = [
            LSTMLayer(store, f"{name}.layer{i}", n_in if i == 0 else units, units, rng)
            for i in range(layers)
        ]

    def initial_state(self, batch: int = 1) -> list[tuple[Tensor, Tensor]]:
        return [layer.initial_state(batch) for layer in self.layers]

    def step(self, x, states: list[tuple[Tensor, Tensor]]) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
        new_states = []
        out = x
        for layer, state in zip(self.layers, states):
            h, c = layer.step(out, state)
            new_states.append((h, c))
            out = h
        return out, new_states


class ConvBlock:
    """conv 3x3 -> batchnorm -> activation -> maxpool 2x2 -> dropout."""

    def __init__(
        self,
        store: ParameterStore,
        name: str,
        c_in: int,
        c_out: int,
        activation: str,
        dropout_p: float,
        rng: np.random.Generator,
        pool: bool = True,
    ):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.activation = activation
        self.dropout_p = dropout_p
        self.pool = pool
        self.kernels = store.add(
            f"{name}.kernels", glorot_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, c_out * 9)
        )
        self.bias = store.add(f"{name}.bias", np.zeros(c_out))
        self.bn = BatchNorm(store, f"{name}.bn", c_out)

    def __call__(self, x, mode: str, rng: np.random.Generator | None = None) -> Tensor:
        out = T.conv2d_3x3(x, self.kernels.tensor, self.bias.tensor)
        out = self.bn(out, mode)
        out = ACTIVATIONS[self.activation](out)
        if self.pool:
            out = T.maxpool_2x2(out)
        return T.dropout(out, self.dropout_p, mode, rng)
