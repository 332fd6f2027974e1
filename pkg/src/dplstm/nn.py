"""Small dense numerical kernel: affine maps, activations, softmax, dropout,
initialisation, Adadelta and finite-difference gradient checking.

All randomness comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np


class ShapeError(ValueError):
    pass


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``W @ x + b`` for a vector ``x``, or row-wise for a ``(T, in)`` matrix."""
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: W{W.shape}, x{x.shape}, b{b.shape} do not conform")
    return x @ W.T + b


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def cubic(x):
    return x * x * x


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "cubic": (cubic, lambda x: 3.0 * x * x),
    "sigmoid": (sigmoid, lambda x: sigmoid(x) * (1.0 - sigmoid(x))),
}


def activation(kind: str, x):
    try:
        return ACTIVATIONS[kind][0](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def activation_grad(kind: str, x):
    """Derivative of the activation, evaluated at the pre-activation ``x``."""
    try:
        return ACTIVATIONS[kind][1](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def softmax(z: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = np.asarray(z, dtype=float)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sample_dropout_mask(shape, p_drop: float, rng: np.random.Generator,
                        dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``p_drop``, else ``1/(1-p_drop)``."""
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p_drop}")
    if p_drop == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= p_drop
    return keep.astype(dtype) / (1.0 - p_drop)


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError(f"glorot_init needs positive dimensions, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class AdadeltaState:
    sq_grad: np.ndarray
    sq_delta: np.ndarray
    rho: float = 0.95
    eps: float = 1e-6

    @classmethod
    def like(cls, param: np.ndarray, rho: float = 0.95, eps: float = 1e-6) -> "AdadeltaState":
        return cls(np.zeros_like(param), np.zeros_like(param), rho, eps)


def adadelta_step(param: np.ndarray, grad: np.ndarray, state: AdadeltaState) -> np.ndarray:
    """One Adadelta update, applied to ``param`` in place. Returns the step taken."""
    if grad.shape != param.shape or state.sq_grad.shape != param.shape:
        raise ShapeError(f"adadelta: param{param.shape} vs grad{grad.shape}")
    rho, eps = state.rho, state.eps
    state.sq_grad *= rho
    state.sq_grad += (1.0 - rho) * grad * grad
    delta = -np.sqrt(state.sq_delta + eps) / np.sqrt(state.sq_grad + eps) * grad
    state.sq_delta *= rho
    state.sq_delta += (1.0 - rho) * delta * delta
    param += delta
    return delta


@dataclass
class GradcheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    worst_index: dict[str, tuple] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())

    def failures(self) -> list[str]:
        return [k for k, e in self.max_rel_error.items() if not e < self.tolerance]


def relative_error(a, n) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_difference_gradcheck(
    loss: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradcheckReport:
    """Compare analytic gradients with central differences.

    ``loss`` is evaluated with the current contents of ``params``, which are
    perturbed in place and restored. With ``max_coords`` set, that many
    coordinates per block are sampled with ``rng``; otherwise all are checked.
    """
    report = GradcheckReport(tolerance=tolerance)
    for name, p in params.items():
        g = analytic[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if max_coords is None or p.size <= max_coords:
            coords = range(p.size)
        else:
            coords = (rng or np.random.default_rng(0)).choice(p.size, max_coords, replace=False)
        worst, worst_at = 0.0, ()
        for flat in coords:
            idx = np.unravel_index(int(flat), p.shape)
            orig = p[idx]
            p[idx] = orig + step
            up = loss()
            p[idx] = orig - step
            down = loss()
            p[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}{idx}")
            err = relative_error(float(g[idx]), (up - down) / (2.0 * step))
            if err > worst:
                worst, worst_at = err, idx
        report.max_rel_error[name] = worst
        report.worst_index[name] = worst_at
    return report
