"""Seeded long-tailed attention generator used by tests and the CLI.

Rows are drawn as pre-softmax scores whose softmax is exactly
symmetric-Dirichlet distributed: if ``g_i ~ Gamma(c)`` then
``softmax(log g) = g / sum(g) ~ Dirichlet(c)``. The log-gamma draw uses
``log Gamma(c) = log Gamma(c + 1) + log(U) / c`` so that tiny
concentrations do not underflow. Each score row is centered to zero mean,
which leaves its softmax unchanged and gives the ``Bool(a_p)`` baseline a
meaningful zero crossing.
"""

import numpy as np

DEFAULT_TOKENS = 196  # 14 x 14 patch grid
DEFAULT_CONCENTRATION = 0.05


def softmax_rows(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def long_tailed_scores(rng, count, n=DEFAULT_TOKENS, concentration=DEFAULT_CONCENTRATION):
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    g = rng.standard_gamma(concentration + 1.0, size=(count, n))
    u = 1.0 - rng.random((count, n))
    scores = np.log(g) + np.log(u) / concentration
    return scores - scores.mean(axis=1, keepdims=True)


def long_tailed_attention(seed, count, n=DEFAULT_TOKENS, concentration=DEFAULT_CONCENTRATION):
    """Return ``(pre_softmax, softmax)`` row pairs, each of shape ``(count, n)``."""
    rng = np.random.default_rng(seed)
    scores = long_tailed_scores(rng, count, n, concentration)
    return scores, softmax_rows(scores)
