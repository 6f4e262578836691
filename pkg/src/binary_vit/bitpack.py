"""Bit-packed binary vectors/matrices and exact popcount kernels.

Layout: bit ``j`` of a row lives in word ``j // 64`` at bit position
``j % 64`` (LSB-first). Bits past the logical length are always zero, so
popcounts run over whole words without masking.

Two encodings share the layout:

- ``PLUS_MINUS``: bit 1 means +1, bit 0 means -1 (``Sign`` outputs).
- ``ZERO_ONE``: bit 1 means 1, bit 0 means 0 (``Bool`` outputs, attention masks).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EncodingMismatch, InvalidBinaryValue

WORD_BITS = 64


class Encoding(enum.IntEnum):
    # Values double as the on-disk dtype codes.
    PLUS_MINUS = 1
    ZERO_ONE = 2


def words_for(nbits: int) -> int:
    return (nbits + WORD_BITS - 1) // WORD_BITS


def _frozen(words: np.ndarray) -> np.ndarray:
    words = np.ascontiguousarray(words, dtype=np.uint64)
    words.setflags(write=False)
    return words


def _to_bits(values: np.ndarray, encoding: Encoding) -> np.ndarray:
    values = np.asarray(values)
    if encoding is Encoding.PLUS_MINUS:
        ok = (values == 1) | (values == -1)
    else:
        ok = (values == 0) | (values == 1)
    if not np.all(ok):
        bad = values[~ok].ravel()[0]
        raise InvalidBinaryValue(f"value {bad!r} is not valid for {encoding.name} encoding")
    return (values == 1).astype(np.uint8)


def _pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a 2-D {0,1} uint8 array into (rows, words) uint64, LSB-first."""
    rows, cols = bits.shape
    nwords = words_for(cols)
    padded = np.zeros((rows, nwords * WORD_BITS), dtype=np.uint8)
    padded[:, :cols] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u8").astype(np.uint64, copy=False).reshape(rows, nwords)


def _unpack_rows(words: np.ndarray, cols: int) -> np.ndarray:
    rows = words.shape[0]
    as_bytes = np.ascontiguousarray(words, dtype="<u8").view(np.uint8).reshape(rows, -1)
    return np.unpackbits(as_bytes, axis=1, count=cols, bitorder="little")


def _decode(bits: np.ndarray, encoding: Encoding) -> np.ndarray:
    if encoding is Encoding.PLUS_MINUS:
        return bits.astype(np.int8) * 2 - 1
    return bits.astype(np.int8)


@dataclass(frozen=True, eq=False)
class BitVector:
    words: np.ndarray
    length: int
    encoding: Encoding

    def __post_init__(self):
        object.__setattr__(self, "words", _frozen(self.words))
        if self.words.ndim != 1 or self.words.size != words_for(self.length):
            raise DimensionMismatch(
                f"{self.words.size} words cannot hold exactly {self.length} bits"
            )
        _check_padding(self.words[None, :], self.length)

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, BitVector):
            return NotImplemented
        return (
            self.length == other.length
            and self.encoding == other.encoding
            and np.array_equal(self.words, other.words)
        )

    def unpack(self) -> np.ndarray:
        """Decoded values as int8 (+-1 or 0/1)."""
        return _decode(_unpack_rows(self.words[None, :], self.length)[0], self.encoding)

    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())


@dataclass(frozen=True, eq=False)
class BitMatrix:
    """Row-major packed matrix; ``words`` has shape ``(rows, ceil(cols / 64))``."""

    words: np.ndarray
    rows: int
    cols: int
    encoding: Encoding

    def __post_init__(self):
        object.__setattr__(self, "words", _frozen(self.words))
        if self.words.shape != (self.rows, words_for(self.cols)):
            raise DimensionMismatch(
                f"word array of shape {self.words.shape} does not match "
                f"{self.rows}x{self.cols} bits"
            )
        _check_padding(self.words, self.cols)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.encoding == other.encoding
            and np.array_equal(self.words, other.words)
        )

    def row(self, i: int) -> BitVector:
        return BitVector(self.words[i], self.cols, self.encoding)

    def unpack(self) -> np.ndarray:
        return _decode(_unpack_rows(self.words, self.cols), self.encoding)


def _check_padding(words: np.ndarray, nbits: int):
    tail = nbits % WORD_BITS
    if words.shape[1] and tail:
        keep = np.uint64((1 << tail) - 1)
        if np.any(words[:, -1] & ~keep):
            raise InvalidBinaryValue("padding bits beyond the logical length must be zero")


def pack(values, encoding: Encoding) -> BitVector:
    values = np.asarray(values)
    if values.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {values.shape}")
    bits = _to_bits(values, encoding)
    return BitVector(_pack_rows(bits[None, :])[0], values.size, encoding)


def pack_matrix(values, encoding: Encoding) -> BitMatrix:
    values = np.asarray(values)
    if values.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {values.shape}")
    bits = _to_bits(values, encoding)
    return BitMatrix(_pack_rows(bits), values.shape[0], values.shape[1], encoding)


def unpack(x):
    return x.unpack()


def complement(a: BitVector) -> BitVector:
    words = ~a.words
    tail = a.length % WORD_BITS
    if tail and words.size:
        words[-1] &= np.uint64((1 << tail) - 1)
    return BitVector(words, a.length, a.encoding)


def _check_pair(a, b, enc_a, enc_b, len_a, len_b):
    if a.encoding is not enc_a or b.encoding is not enc_b:
        raise EncodingMismatch(
            f"expected ({enc_a.name}, {enc_b.name}), got ({a.encoding.name}, {b.encoding.name})"
        )
    if len_a != len_b:
        raise DimensionMismatch(f"lengths differ: {len_a} vs {len_b}")


def dot_pm(a: BitVector, b: BitVector) -> int:
    """Inner product of two +-1 vectors: ``n - 2 * popcount(a XOR b)``."""
    _check_pair(a, b, Encoding.PLUS_MINUS, Encoding.PLUS_MINUS, a.length, b.length)
    return a.length - 2 * int(np.bitwise_count(a.words ^ b.words).sum())


def dot_mask_pm(mask: BitVector, v: BitVector) -> int:
    """Sum of ``v`` over the positions selected by ``mask``."""
    _check_pair(mask, v, Encoding.ZERO_ONE, Encoding.PLUS_MINUS, mask.length, v.length)
    both = int(np.bitwise_count(mask.words & v.words).sum())
    return 2 * both - mask.popcount()


def _scales(values, n: int, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n,):
        raise DimensionMismatch(f"{name} has shape {values.shape}, expected ({n},)")
    return values


def gemm_pm_int(A: BitMatrix, B: BitMatrix) -> np.ndarray:
    """Integer part of ``gemm_pm``: ``out[i, j] = dot_pm(A.row(i), B.row(j))``.

    ``B`` is the right operand stored transposed (one row per output column).
    """
    _check_pair(A, B, Encoding.PLUS_MINUS, Encoding.PLUS_MINUS, A.cols, B.cols)
    return _kernels.xnor_gemm(A.words, B.words, A.cols)


def gemm_pm(A: BitMatrix, B: BitMatrix, row_scales, col_scales) -> np.ndarray:
    acc = gemm_pm_int(A, B)
    rs = _scales(row_scales, A.rows, "row_scales")
    cs = _scales(col_scales, B.rows, "col_scales")
    return np.outer(rs, cs) * acc


def gemm_mask_pm_int(A: BitMatrix, V: BitMatrix) -> np.ndarray:
    """Integer part of ``gemm_mask_pm``; ``V`` is stored transposed."""
    _check_pair(A, V, Encoding.ZERO_ONE, Encoding.PLUS_MINUS, A.cols, V.cols)
    return _kernels.mask_gemm(A.words, V.words)


def gemm_mask_pm(A: BitMatrix, V: BitMatrix, v_scales) -> np.ndarray:
    """``out[i, j] = v_scales[j] * sum_{k: A[i,k]=1} V[k, j]``.

    ``V`` is passed transposed (row ``j`` holds output column ``j`` over
    tokens ``k``), so ``v_scales`` has one entry per output column.
    """
    acc = gemm_mask_pm_int(A, V)
    vs = _scales(v_scales, V.rows, "v_scales")
    return acc * vs[None, :]
