"""Shared test oracles.

``numeric_grad`` is the independent central finite-difference oracle used
to verify every backward implementation; nothing here imports from the
autodiff internals beyond the public Tensor type.
"""

from __future__ import annotations

import numpy as np

from glyphgen.autodiff import Tensor

FD_STEP = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar-valued f at every element of x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Worst elementwise relative error; the floor keeps near-zero entries sane."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(fn, arrays: dict[str, np.ndarray], h: float = FD_STEP) -> float:
    """Max relative error between tape gradients and finite differences.

    ``fn`` maps a dict of name -> Tensor to a scalar Tensor.  Finite
    differences re-evaluate ``fn`` on plain constants, so the graph of the
    checked call is the only one taped.
    """
    tensors = {k: Tensor(np.array(v), requires_grad=True) for k, v in arrays.items()}
    out = fn(tensors)
    out.backward()
    worst = 0.0
    for name in arrays:
        def scalar(x, name=name):
            consts = {k: Tensor(x if k == name else arrays[k]) for k in arrays}
            return float(fn(consts).data)

        numeric = numeric_grad(scalar, arrays[name], h)
        analytic = tensors[name].grad
        if analytic is None:
            analytic = np.zeros_like(numeric)
        worst = max(worst, max_rel_err(analytic, numeric))
    return worst
