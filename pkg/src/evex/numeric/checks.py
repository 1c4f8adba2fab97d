"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-6,
) -> float:
    """Compare the analytic gradient of scalar ``f`` at ``x`` against central
    differences, returning the worst relative discrepancy

        max_i |analytic_i - numeric_i| / (|analytic_i| + 1e-12).

    ``x`` is perturbed in place one coordinate at a time and restored.
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(x).data)
            flat[i] = orig - eps
            lo = float(f(x).data)
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * eps)

    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)))


def directional_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    direction: np.ndarray | None = None,
) -> float:
    """Central-difference check of the directional derivative of ``f`` at
    ``x``, returning |analytic - numeric| / (|analytic| + 1e-12).

    The default direction is the analytic gradient itself (normalized), the
    best-conditioned probe for dense parameters: per-coordinate differences
    on a deep f64 graph drown coordinates whose gradient happens to be tiny
    in cancellation noise, while the projection onto the gradient stays
    well above the noise floor.
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    backward(out)
    g = x.grad.copy()

    d = g if direction is None else np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        d = np.ones_like(x.data)
        norm = float(np.linalg.norm(d))
    d = d / norm
    analytic = float((g * d).sum())

    with no_grad():
        x.data += eps * d
        hi = float(f(x).data)
        x.data -= 2.0 * eps * d
        lo = float(f(x).data)
        x.data += eps * d
    numeric = (hi - lo) / (2.0 * eps)
    return abs(analytic - numeric) / (abs(analytic) + 1e-12)
