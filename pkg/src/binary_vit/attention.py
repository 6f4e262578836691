"""Reference softmax attention and the binarized multi-head forward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binarizer import BinaryLinear, ScaleMode, binarize_rows, binarize_weights
from .bitpack import Encoding, gemm_mask_pm, gemm_pm, pack_matrix
from .errors import ConfigError, DimensionMismatch, InvalidBeta
from .sab import DEFAULT_BETA, sab_binarize_rows
from .synthetic import softmax_rows

PROJECTIONS = ("q", "k", "v", "proj")


@dataclass(frozen=True)
class AttentionConfig:
    heads: int
    head_dim: int
    beta: float = DEFAULT_BETA
    binarize_qkv: bool = False
    binarize_attention: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.head_dim < 1:
            raise ConfigError("heads and head_dim must be at least 1")
        if not 0 < self.beta < 1:
            raise InvalidBeta(f"beta must lie in (0, 1), got {self.beta}")

    @property
    def embed_dim(self):
        return self.heads * self.head_dim


@dataclass(frozen=True)
class AttentionLayer:
    """Master weights ``{name: (weight, bias)}`` plus optional binary views.

    Weights are ``(out_features, in_features)``. ``binary`` maps each
    projection name to its :class:`BinaryLinear` when the layer is binarized.
    """

    weights: dict
    binary: dict | None = None

    @classmethod
    def build(cls, weights, binarize=False, mode=ScaleMode.ORDINARY):
        missing = set(PROJECTIONS) - set(weights)
        if missing:
            raise ConfigError(f"attention weights missing {sorted(missing)}")
        views = None
        if binarize:
            views = {name: binarize_weights(weights[name][0], mode) for name in PROJECTIONS}
        return cls(dict(weights), views)


def fp_attention(Q, K, V) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k)) V`` with a row-wise softmax."""
    Q, K, V = (np.asarray(m, dtype=np.float64) for m in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise DimensionMismatch("Q, K, V must be matrices")
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]:
        raise DimensionMismatch(f"incompatible shapes Q{Q.shape} K{K.shape} V{V.shape}")
    scores = Q @ K.T / np.sqrt(K.shape[1])
    return softmax_rows(scores) @ V


def _linear(x, name, layer: AttentionLayer, binary: bool):
    weight, bias = layer.weights[name]
    if not binary:
        return x @ np.asarray(weight, dtype=np.float64).T + bias
    view: BinaryLinear = layer.binary[name]
    bits, scales = binarize_rows(x)
    return view.forward_binary(bits, scales) + bias


def binary_attention_forward(X, layer: AttentionLayer, cfg: AttentionConfig, intermediates=None):
    """Multi-head self-attention with optional binarization stages.

    With ``cfg.binarize_qkv`` every projection runs on sign bits (input rows
    binarized with per-row l1 scales), Q/K rows are binarized per token and
    head, and V is binarized per channel so the attention-value product
    keeps one scale per output column. With ``cfg.binarize_attention`` each
    softmax row is replaced by its unscaled SAB mask.

    If ``intermediates`` is a dict it receives per-head ``softmax`` rows and
    ``masks``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.embed_dim:
        raise DimensionMismatch(f"expected tokens x {cfg.embed_dim}, got {X.shape}")
    binary = cfg.binarize_qkv
    if binary and layer.binary is None:
        raise ConfigError("binarize_qkv requires a binarized attention layer")

    Q = _linear(X, "q", layer, binary)
    K = _linear(X, "k", layer, binary)
    V = _linear(X, "v", layer, binary)
    d = cfg.head_dim
    heads_out = []
    softmaxes, masks = [], []
    for h in range(cfg.heads):
        cols = slice(h * d, (h + 1) * d)
        Qh, Kh, Vh = Q[:, cols], K[:, cols], V[:, cols]
        if binary:
            q_bits, q_s = binarize_rows(Qh)
            k_bits, k_s = binarize_rows(Kh)
            scores = gemm_pm(q_bits, k_bits, q_s, k_s) / np.sqrt(d)
        else:
            scores = Qh @ Kh.T / np.sqrt(d)
        probs = softmax_rows(scores)
        softmaxes.append(probs)

        mask = sab_binarize_rows(probs, cfg.beta) if cfg.binarize_attention else None
        masks.append(mask)
        if binary:
            vt_bits, v_s = binarize_rows(Vh.T)
            if mask is not None:
                out = gemm_mask_pm(pack_matrix(mask, Encoding.ZERO_ONE), vt_bits, v_s)
            else:
                out = probs @ (vt_bits.unpack() * v_s[:, None]).T
        else:
            out = (mask if mask is not None else probs) @ Vh
        heads_out.append(out)

    merged = np.concatenate(heads_out, axis=1)
    if intermediates is not None:
        intermediates["softmax"] = softmaxes
        intermediates["masks"] = masks
    return _linear(merged, "proj", layer, binary)
