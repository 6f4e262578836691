"""Sign/Bool binarizers, l1-mean channel scales and binarized linear layers."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .bitpack import BitMatrix, Encoding, gemm_pm, pack_matrix
from .errors import DimensionMismatch, InvalidInput

logger = logging.getLogger(__name__)


class ScaleMode(enum.Enum):
    ORDINARY = "ordinary"
    PARAMETERIZED = "parameterized"


def _finite(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise InvalidInput(f"{name} contains NaN")
    return x


def sign_binarize(x) -> np.ndarray:
    """+1 where ``x >= 0`` (zero included), -1 elsewhere."""
    x = _finite(x)
    return np.where(x >= 0, 1.0, -1.0)


def bool_binarize(x, threshold=0.0) -> np.ndarray:
    """1 where ``x - threshold >= 0``, else 0."""
    x = _finite(x)
    if np.isnan(threshold):
        raise InvalidInput("threshold is NaN")
    return np.where(x - threshold >= 0, 1.0, 0.0)


def channel_scale(x) -> float:
    x = _finite(x)
    if x.size == 0:
        raise InvalidInput("cannot compute a scale for an empty vector")
    return float(np.abs(x).mean())


def row_scales(X) -> np.ndarray:
    """``channel_scale`` applied to every row of a matrix."""
    X = _finite(X)
    if X.ndim != 2 or X.shape[1] == 0:
        raise InvalidInput(f"expected a non-empty matrix, got shape {X.shape}")
    return np.abs(X).mean(axis=1)


def binarize_rows(X) -> tuple[BitMatrix, np.ndarray]:
    """Sign bits plus per-row l1-mean scales, ``X ~= scales[:, None] * sign(X)``."""
    X = _finite(X)
    return pack_matrix(sign_binarize(X), Encoding.PLUS_MINUS), row_scales(X)


@dataclass(eq=False)
class BinaryLinear:
    """A linear layer with +-1 weights and one scale per output channel.

    Scales of a ``PARAMETERIZED`` layer are trainable: overwrite them with
    :meth:`set_scales` after each optimizer step.
    """

    weight_bits: BitMatrix
    scales: np.ndarray
    scale_mode: ScaleMode = ScaleMode.ORDINARY
    sign_flips: int = 0

    def __post_init__(self):
        self.scales = np.array(self.scales, dtype=np.float64)
        if self.scales.shape != (self.weight_bits.rows,):
            raise DimensionMismatch(
                f"{self.scales.shape[0] if self.scales.ndim else 0} scales for "
                f"{self.weight_bits.rows} output channels"
            )
        if self.scale_mode is ScaleMode.ORDINARY:
            self.scales.setflags(write=False)

    @property
    def in_features(self):
        return self.weight_bits.cols

    @property
    def out_features(self):
        return self.weight_bits.rows

    def signs(self) -> np.ndarray:
        return self.weight_bits.unpack().astype(np.float64)

    def dequantized(self) -> np.ndarray:
        return self.scales[:, None] * self.signs()

    def forward(self, x) -> np.ndarray:
        """Full-precision activations times the scaled binary weights."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_features:
            raise DimensionMismatch(f"input width {x.shape[-1]} != fan-in {self.in_features}")
        return (x @ self.signs().T) * self.scales

    def forward_binary(self, x_bits: BitMatrix, x_scales) -> np.ndarray:
        """Binary activations (sign bits + per-row scales) via XNOR-popcount."""
        return gemm_pm(x_bits, self.weight_bits, x_scales, self.scales)

    def set_scales(self, values) -> int:
        """Replace parameterized scales; returns how many channels changed sign.

        Scales are left unconstrained, so a flip is recorded rather than
        prevented.
        """
        if self.scale_mode is not ScaleMode.PARAMETERIZED:
            raise InvalidInput("ordinary scales are derived from the weights and are read-only")
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.scales.shape:
            raise DimensionMismatch(f"expected {self.scales.shape} scales, got {values.shape}")
        flips = int(np.count_nonzero(np.signbit(values) != np.signbit(self.scales)))
        if flips:
            self.sign_flips += flips
            logger.warning("%d parameterized scale(s) changed sign", flips)
        self.scales[...] = values
        return flips


def binarize_weights(W, mode: ScaleMode = ScaleMode.ORDINARY) -> BinaryLinear:
    """Binarize a (out_features, in_features) weight matrix row by row.

    Parameterized scales start at the ordinary l1-mean values.
    """
    W = _finite(W, "W")
    if W.ndim != 2 or W.size == 0:
        raise InvalidInput(f"W must be a non-empty matrix, got shape {W.shape}")
    bits, scales = binarize_rows(W)
    return BinaryLinear(bits, scales, mode)


def pws_scale_gradient(x, weight_bits_row, upstream) -> float:
    """d(out)/d(alpha) for ``out = alpha * (w_hat . x)``, times ``upstream``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weight_bits_row, dtype=np.float64)
    if x.shape != w.shape:
        raise DimensionMismatch(f"input {x.shape} vs weight row {w.shape}")
    return float(upstream) * float(w @ x)


def pws_scale_gradients(layer: BinaryLinear, x, grad_out) -> np.ndarray:
    """Batched scale gradients: ``sum_t grad_out[t, c] * (x_t . w_hat_c)``."""
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape[:-1] + (layer.out_features,):
        raise DimensionMismatch(f"grad_out {grad_out.shape} does not match outputs")
    z = x @ layer.signs().T
    return (grad_out * z).reshape(-1, layer.out_features).sum(axis=0)
