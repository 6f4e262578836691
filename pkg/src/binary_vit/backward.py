"""Straight-through gradients, the softmax-aware attention backward, and a
central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidInput, NumericalFailure
from .synthetic import softmax_rows


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def ste_sign_grad(x, g_out) -> np.ndarray:
    """Clipped STE for Sign: pass ``g_out`` where ``|x| <= 1``, zero elsewhere."""
    x, g = _pair(x, g_out)
    return np.where(np.abs(x) <= 1, g, 0.0)


def softmax(x) -> np.ndarray:
    return softmax_rows(x)


def softmax_vjp(s, g) -> np.ndarray:
    """``J^T g`` for ``s = softmax(x)``: ``s * (g - <g, s>)``, row-wise."""
    s, g = _pair(s, g)
    return s * (g - np.sum(g * s, axis=-1, keepdims=True))


def sab_backward(s, g_q) -> np.ndarray:
    """Gradient w.r.t. pre-softmax scores for a softmax-aware binarized row.

    The threshold step is treated as identity (STE) with the threshold held
    constant, then the exact softmax Jacobian is applied.
    """
    return softmax_vjp(s, g_q)


def bibert_backward(g_q) -> np.ndarray:
    """Softmax-agnostic baseline: the binarized gradient is used as-is."""
    return np.array(g_q, dtype=np.float64)


@dataclass(frozen=True)
class GradCheckReport:
    max_abs_err: float
    max_rel_err: float
    probe_count: int
    step: float

    def passed(self, rel_tol: float = 1e-5) -> bool:
        return self.max_rel_err < rel_tol


def finite_diff_check(f, x, analytic_vjp, g, step: float = 1e-5) -> GradCheckReport:
    """Compare ``analytic_vjp`` with central differences of ``g . f(x)``.

    The relative error is normalized by the largest gradient component
    (``max|err| / max(|analytic|, |numeric|)``), so near-zero entries of a
    well-scaled gradient do not blow it up.
    """
    if not step > 0:
        raise InvalidInput("step must be positive")
    x = np.array(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    analytic = np.asarray(analytic_vjp, dtype=np.float64)
    if analytic.shape != x.shape:
        raise DimensionMismatch(f"analytic gradient {analytic.shape} vs input {x.shape}")

    def objective(z):
        out = np.asarray(f(z), dtype=np.float64)
        if out.shape != g.shape:
            raise DimensionMismatch(f"f(x) has shape {out.shape}, cotangent {g.shape}")
        if not np.isfinite(out).all():
            raise NumericalFailure("non-finite function value during finite differences")
        val = float(np.sum(g * out))
        if not np.isfinite(val):
            raise NumericalFailure("non-finite function value during finite differences")
        return val

    numeric = np.empty_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = objective(x)
        flat[i] = orig - step
        lo = objective(x)
        flat[i] = orig
        numeric.reshape(-1)[i] = (hi - lo) / (2 * step)

    diff = np.abs(numeric - analytic)
    max_abs = float(diff.max()) if diff.size else 0.0
    scale = float(max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0)))
    max_rel = max_abs / scale if scale > 0 else max_abs
    return GradCheckReport(max_abs, max_rel, int(flat.size), float(step))
