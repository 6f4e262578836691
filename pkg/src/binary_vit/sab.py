"""Softmax-aware binarization of attention rows.

An attention row ``a`` (non-negative, sums to one) is approximated by
``v * b`` with ``b`` in {0, 1}^n. Three solvers are provided:

- :func:`coordinate_descent`: alternate the closed-form ``v = a.b / |b|``
  with re-thresholding at ``T = v / 2``.
- :func:`brute_force_oracle`: enumerate all ``2**n`` encodings.
- :func:`sab_binarize`: the inference-time shortcut ``T = beta * max(a)``.

Row-batched variants (``*_rows``) operate on 2-D arrays and are what the
statistics helpers and the CLI use; the single-row functions delegate to
them so both paths give bit-identical answers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .binarizer import bool_binarize
from .errors import DegenerateInput, DimensionMismatch, InvalidBeta, InvalidInput, TooLarge

DEFAULT_ITERS = 5
DEFAULT_BETA = 0.25
SUM_TOL = 1e-6
MAX_ORACLE_LEN = 20


def check_attention_rows(A) -> np.ndarray:
    """Validate softmax rows; returns a float64 2-D view."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] == 0:
        raise InvalidInput(f"attention rows must be a non-empty 2-D array, got {A.shape}")
    if not np.isfinite(A).all():
        raise InvalidInput("attention values must be finite")
    if (A < 0).any():
        raise InvalidInput("attention values must be non-negative")
    zero = ~A.any(axis=1)
    if zero.any():
        raise DegenerateInput(f"attention row {int(np.argmax(zero))} is all zeros")
    drift = np.abs(A.sum(axis=1) - 1.0)
    if (drift > SUM_TOL).any():
        i = int(np.argmax(drift))
        raise InvalidInput(f"attention row {i} sums to {A[i].sum():.9g}, not 1")
    return A


def _check_beta(beta):
    if not (beta > 0):
        raise InvalidBeta(f"beta must be positive, got {beta}")
    if beta >= 1:
        raise InvalidBeta(f"beta must be below 1 or the maximum itself is dropped, got {beta}")


@dataclass(frozen=True, eq=False)
class SabSolution:
    v: float
    threshold: float
    bits: np.ndarray
    error: float
    iterations: int
    history: tuple = field(default=())

    def __eq__(self, other):
        if not isinstance(other, SabSolution):
            return NotImplemented
        return (
            self.v == other.v
            and self.threshold == other.threshold
            and np.array_equal(self.bits, other.bits)
            and self.error == other.error
            and self.iterations == other.iterations
            and self.history == other.history
        )

    @property
    def quantized(self) -> np.ndarray:
        return self.v * self.bits


class RowSolutions(NamedTuple):
    v: np.ndarray
    threshold: np.ndarray
    bits: np.ndarray
    error: np.ndarray
    iterations: np.ndarray
    history: np.ndarray  # (rows, iters); NaN after a row reached its fixed point


def _sq_err(v, B, A):
    r = v[:, None] * B - A
    return np.einsum("ij,ij->i", r, r)


def coordinate_descent_rows(A, iters: int = DEFAULT_ITERS) -> RowSolutions:
    A = check_attention_rows(A)
    if iters < 1:
        raise InvalidInput("need at least one iteration")
    rows = A.shape[0]
    # Sign(a) is +1 everywhere on non-negative input.
    B = (A >= 0).astype(np.float64)
    v = np.zeros(rows)
    T = np.zeros(rows)
    err = np.zeros(rows)
    done = np.zeros(rows, dtype=np.int64)
    history = np.full((rows, iters), np.nan)
    live = np.arange(rows)
    for t in range(iters):
        a, b = A[live], B[live]
        v_t = np.einsum("ij,ij->i", a, b) / b.sum(axis=1)
        T_t = v_t / 2
        b_t = (a - T_t[:, None] >= 0).astype(np.float64)
        e_t = _sq_err(v_t, b_t, a)
        v[live], T[live], B[live], err[live] = v_t, T_t, b_t, e_t
        history[live, t] = e_t
        done[live] = t + 1
        live = live[(b_t != b).any(axis=1)]
        if live.size == 0:
            break
    return RowSolutions(v, T, B.astype(np.uint8), err, done, history)


def coordinate_descent(a_s, iters: int = DEFAULT_ITERS) -> SabSolution:
    """Alternating minimization of ``||v b - a_s||^2`` over ``v`` and ``b``.

    Stops early once ``b`` stops changing, since later iterations would be
    identical.
    """
    r = coordinate_descent_rows(np.asarray(a_s, dtype=np.float64)[None, :], iters)
    n = int(r.iterations[0])
    return SabSolution(
        float(r.v[0]),
        float(r.threshold[0]),
        r.bits[0],
        float(r.error[0]),
        n,
        tuple(float(e) for e in r.history[0, :n]),
    )


def brute_force_oracle(a_s) -> SabSolution:
    """Global minimizer of ``||v b - a_s||^2`` by enumerating every ``b``."""
    A = check_attention_rows(a_s)
    if A.shape[0] != 1:
        raise DimensionMismatch("the oracle takes a single attention vector")
    a = A[0]
    n = a.size
    if n > MAX_ORACLE_LEN:
        raise TooLarge(f"2**{n} encodings is too many; limit is n <= {MAX_ORACLE_LEN}")
    shifts = np.arange(n, dtype=np.int64)
    best = (np.inf, 0.0, 0)
    chunk = 1 << 16
    for start in range(0, 1 << n, chunk):
        masks = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        B = ((masks[:, None] >> shifts) & 1).astype(np.float64)
        cnt = B.sum(axis=1)
        v = np.divide(B @ a, cnt, out=np.zeros(masks.size), where=cnt > 0)
        e = _sq_err(v, B, a[None, :])
        i = int(np.argmin(e))
        if e[i] < best[0]:
            best = (float(e[i]), float(v[i]), int(masks[i]))
    err, v, mask = best
    bits = ((mask >> shifts) & 1).astype(np.uint8)
    return SabSolution(v, v / 2, bits, err, 0)


def approx_threshold(a_s, beta: float = DEFAULT_BETA) -> float:
    a = np.asarray(a_s, dtype=np.float64)
    if a.size == 0:
        raise InvalidInput("empty attention vector")
    if not (beta > 0):
        raise InvalidBeta(f"beta must be positive, got {beta}")
    return float(beta * a.max())


def sab_binarize_rows(A, beta: float = DEFAULT_BETA) -> np.ndarray:
    A = check_attention_rows(A)
    _check_beta(beta)
    T = beta * A.max(axis=1, keepdims=True)
    return (A - T >= 0).astype(np.uint8)


def sab_binarize(a_s, beta: float = DEFAULT_BETA) -> np.ndarray:
    """{0,1} mask thresholded at ``beta * max(a_s)``."""
    a = check_attention_rows(a_s)[0]
    _check_beta(beta)
    return bool_binarize(a, approx_threshold(a, beta)).astype(np.uint8)


def approx_solution(a_s, beta: float = DEFAULT_BETA) -> SabSolution:
    """The max-based mask paired with its least-squares scale ``v``."""
    a = check_attention_rows(a_s)[0]
    bits = sab_binarize(a, beta)
    v = float(a @ bits / bits.sum())
    return SabSolution(v, approx_threshold(a, beta), bits, quant_error(v * bits, a), 0)


def quant_error(a_q, a_s) -> float:
    """Squared l2 distance ``||a_q - a_s||^2``."""
    a_q = np.asarray(a_q, dtype=np.float64)
    a_s = np.asarray(a_s, dtype=np.float64)
    if a_q.shape != a_s.shape:
        raise DimensionMismatch(f"{a_q.shape} vs {a_s.shape}")
    r = a_q - a_s
    return float(r @ r)


def row_errors(Q, A) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if Q.shape != A.shape:
        raise DimensionMismatch(f"{Q.shape} vs {A.shape}")
    r = Q - A
    return np.einsum("ij,ij->i", r, r)


def approx_errors(A, beta: float = DEFAULT_BETA, with_scale: bool = True) -> np.ndarray:
    """Per-row error of the max-threshold mask, with or without its scale."""
    A = check_attention_rows(A)
    B = sab_binarize_rows(A, beta).astype(np.float64)
    if not with_scale:
        return row_errors(B, A)
    v = np.einsum("ij,ij->i", A, B) / B.sum(axis=1)
    return _sq_err(v, B, A)


def bool_errors(pre_softmax, A) -> np.ndarray:
    """Per-row error of ``Bool(a_p)`` against the softmax rows it replaces."""
    return row_errors(bool_binarize(pre_softmax), A)


@dataclass(frozen=True)
class BetaFit:
    beta: float
    samples: int
    residual: float


def fit_beta(samples, iters: int = DEFAULT_ITERS) -> BetaFit:
    """Regress coordinate-descent thresholds on row maxima through the origin.

    ``beta = sum(T* m) / sum(m^2)``; ``residual`` is the mean squared
    regression residual.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        groups = [samples]
    else:
        groups = [np.asarray(s, dtype=np.float64)[None, :] for s in samples]
    if not groups or sum(g.shape[0] for g in groups) == 0:
        raise DegenerateInput("no samples to fit")
    t_opt, maxima = [], []
    for g in groups:
        r = coordinate_descent_rows(g, iters)
        t_opt.append(r.threshold)
        maxima.append(np.asarray(g, dtype=np.float64).max(axis=1))
    t_opt = np.concatenate(t_opt)
    maxima = np.concatenate(maxima)
    denom = float(maxima @ maxima)
    if denom == 0:
        raise DegenerateInput("all sample maxima are zero")
    beta = float(t_opt @ maxima) / denom
    resid = t_opt - beta * maxima
    return BetaFit(beta, int(t_opt.size), float(resid @ resid / resid.size))


@dataclass(frozen=True)
class StaticThreshold:
    """One global threshold and scale, the learned-but-fixed baseline."""

    threshold: float
    scale: float

    def errors(self, A) -> np.ndarray:
        A = check_attention_rows(A)
        return row_errors(self.scale * (A >= self.threshold), A)


def fit_static_threshold(A) -> StaticThreshold:
    """Exact minimizer of total ``||s * Bool(a - T) - a||^2`` over a shared (T, s).

    For each candidate T (every distinct value) the optimal shared scale is
    ``sum(selected) / count(selected)``, so the loss reduces to
    ``sum(a^2) - sum(selected)^2 / count(selected)``; suffix sums over the
    sorted values evaluate every candidate at once.
    """
    A = check_attention_rows(A)
    vals = np.sort(A.ravel())[::-1]
    csum = np.cumsum(vals)
    cnt = np.arange(1, vals.size + 1)
    # Only the last index of each run of equal values is a valid cut.
    last = np.ones(vals.size, dtype=bool)
    last[:-1] = vals[:-1] != vals[1:]
    gain = np.where(last, csum**2 / cnt, -np.inf)
    k = int(np.argmax(gain))
    return StaticThreshold(float(vals[k]), float(csum[k] / cnt[k]))
