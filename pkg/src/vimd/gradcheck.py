"""Central finite-difference checking of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .exceptions import DomainError
from .tensor import Tensor, backward, no_grad

# coordinates whose gradient is below this fraction of the largest one are
# compared against that floor instead of their own (noise-dominated) magnitude
SCALE_FLOOR = 1e-2


def numerical_grad(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-3,
                   coords: Optional[np.ndarray] = None) -> np.ndarray:
    """``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every coordinate of ``x``.

    With ``coords`` (flat indices) only those entries are filled; the rest stay zero.
    """
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    with no_grad():
        for i in (range(flat.size) if coords is None else coords):
            orig = flat[i]
            flat[i] = orig + step
            plus = float(f(x).data.sum())
            flat[i] = orig - step
            minus = float(f(x).data.sum())
            flat[i] = orig
            out[i] = (plus - minus) / (2.0 * step)
    return out.reshape(x.shape)


def analytic_grad(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    prev = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        backward(f(x))
        g = np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64)
    finally:
        x.requires_grad = prev
        x.grad = None
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest per-coordinate ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), SCALE_FLOOR * scale)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-3,
    dtype=np.float64,
    coords: Optional[np.ndarray] = None,
) -> float:
    """Compare ``backward()`` against central differences; return max relative error.

    The check runs with ``x`` promoted to ``dtype`` (float64 by default) so the
    finite-difference reference is not dominated by float32 cancellation.  Pass
    ``dtype=np.float32`` to exercise the float32 path directly.  ``coords``
    restricts the comparison to a subset of flat indices.
    """
    if not 1e-4 <= step <= 1e-2:
        raise DomainError(f"finite-difference step must lie in [1e-4, 1e-2], got {step}")
    original = x.data
    x.data = original.astype(dtype, copy=True)
    try:
        a = analytic_grad(f, x)
        n = numerical_grad(f, x, step, coords)
    finally:
        x.data = original
    if coords is not None:
        a = a.reshape(-1)[coords]
        n = n.reshape(-1)[coords]
    return relative_error(a, n)
