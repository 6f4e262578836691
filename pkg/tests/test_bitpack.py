import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binary_vit.bitpack import (
    BitMatrix,
    BitVector,
    Encoding,
    complement,
    dot_mask_pm,
    dot_pm,
    gemm_mask_pm,
    gemm_mask_pm_int,
    gemm_pm,
    gemm_pm_int,
    pack,
    pack_matrix,
)
from binary_vit.binarizer import channel_scale
from binary_vit.errors import DimensionMismatch, EncodingMismatch, InvalidBinaryValue
from oracles import naive_dot, naive_int_gemm, naive_masked_sum

PM, ZO = Encoding.PLUS_MINUS, Encoding.ZERO_ONE

pm_vectors = st.lists(st.sampled_from([-1, 1]), min_size=0, max_size=300)


def rand_pm(rng, *shape):
    return np.where(rng.random(shape) < 0.5, -1, 1)


def test_pack_lsb_first():
    v = pack([1, -1, 1], PM)
    assert v.words.tolist() == [0b101]
    assert v.length == 3


def test_zero_one_padding_two_words():
    v = pack(np.zeros(65), ZO)
    assert v.words.shape == (2,)
    assert not v.words.any()


def test_round_trip_len_1000(rng):
    x = rand_pm(rng, 1000)
    np.testing.assert_array_equal(pack(x, PM).unpack(), x)


@given(pm_vectors)
def test_round_trip_property(values):
    v = pack(np.array(values, dtype=np.int64), PM)
    np.testing.assert_array_equal(v.unpack(), values)
    assert v.words.size == (len(values) + 63) // 64


def test_invalid_values_rejected():
    with pytest.raises(InvalidBinaryValue):
        pack([1, 0, -1], PM)
    with pytest.raises(InvalidBinaryValue):
        pack([1, -1], ZO)


def test_noncanonical_padding_rejected():
    with pytest.raises(InvalidBinaryValue):
        BitVector(np.array([0b1000], dtype=np.uint64), 3, PM)


def test_words_read_only():
    v = pack([1, 1], PM)
    with pytest.raises(ValueError):
        v.words[0] = 0


def test_dot_pm_hand_case():
    assert dot_pm(pack([1, -1, 1], PM), pack([1, 1, 1], PM)) == 1


def test_dot_pm_matches_naive_loop(rng):
    a, b = rand_pm(rng, 513), rand_pm(rng, 513)
    assert dot_pm(pack(a, PM), pack(b, PM)) == naive_dot(a, b)


@given(pm_vectors)
def test_dot_pm_self_and_complement(values):
    a = pack(np.array(values, dtype=np.int64), PM)
    n = len(values)
    assert dot_pm(a, a) == n
    assert dot_pm(a, complement(a)) == -n


@given(st.integers(0, 300).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n),
    st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n))))
def test_dot_pm_range_and_parity(pair):
    a, b = pair
    n = len(a)
    d = dot_pm(pack(np.array(a), PM), pack(np.array(b), PM))
    assert -n <= d <= n
    assert (d - n) % 2 == 0


def test_dot_errors():
    with pytest.raises(DimensionMismatch):
        dot_pm(pack([1, 1], PM), pack([1, 1, 1], PM))
    with pytest.raises(EncodingMismatch):
        dot_pm(pack([1, 1], PM), pack([1, 1], ZO))
    with pytest.raises(EncodingMismatch):
        dot_mask_pm(pack([1, 1], PM), pack([1, 1], PM))


def test_dot_mask_hand_cases(rng):
    assert dot_mask_pm(pack([1, 0, 1], ZO), pack([1, -1, -1], PM)) == 0
    v = pack(rand_pm(rng, 77), PM)
    assert dot_mask_pm(pack(np.zeros(77), ZO), v) == 0


def test_dot_mask_matches_naive(rng):
    m = rng.integers(0, 2, 200)
    v = rand_pm(rng, 200)
    assert dot_mask_pm(pack(m, ZO), pack(v, PM)) == naive_masked_sum(m, v)


def test_gemm_pm_one_by_one():
    A = pack_matrix([[1]], PM)
    np.testing.assert_array_equal(gemm_pm(A, A, [1.0], [1.0]), [[1.0]])


def test_gemm_pm_8x8x8_matches_naive(rng):
    a, bt = rand_pm(rng, 8, 8), rand_pm(rng, 8, 8)
    out = gemm_pm(pack_matrix(a, PM), pack_matrix(bt, PM), np.ones(8), np.ones(8))
    np.testing.assert_array_equal(out, naive_int_gemm(a, bt))


def test_gemm_pm_with_l1_scales(rng):
    W = rng.standard_normal((5, 70))
    X = rng.standard_normal((6, 70))
    ws = np.array([channel_scale(r) for r in W])
    xs = np.array([channel_scale(r) for r in X])
    sw, sx = np.where(W >= 0, 1, -1), np.where(X >= 0, 1, -1)
    out = gemm_pm(pack_matrix(sx, PM), pack_matrix(sw, PM), xs, ws)
    expected = (xs[:, None] * sx) @ (ws[:, None] * sw).T
    np.testing.assert_allclose(out, expected, rtol=1e-14, atol=1e-14)


def test_gemm_scale_length_checked(rng):
    A = pack_matrix(rand_pm(rng, 3, 4), PM)
    with pytest.raises(DimensionMismatch):
        gemm_pm(A, A, np.ones(2), np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_gemm_integer_stage_exact(m, n, k, seed):
    r = np.random.default_rng(seed)
    a, bt = rand_pm(r, m, k), rand_pm(r, n, k)
    mask = r.integers(0, 2, (m, k))
    ref = a.astype(np.int64) @ bt.T
    np.testing.assert_array_equal(gemm_pm_int(pack_matrix(a, PM), pack_matrix(bt, PM)), ref)
    np.testing.assert_array_equal(
        gemm_mask_pm_int(pack_matrix(mask, ZO), pack_matrix(bt, PM)), mask @ bt.T
    )


def test_gemm_mask_one_hot_selects_rows(rng):
    V = rand_pm(rng, 5, 9)  # tokens x channels
    scales = rng.random(9) + 0.1
    A = np.eye(5, dtype=np.int64)[[3, 0, 4]]
    out = gemm_mask_pm(pack_matrix(A, ZO), pack_matrix(V.T, PM), scales)
    np.testing.assert_array_equal(out, V[[3, 0, 4]] * scales)


def test_gemm_mask_all_ones_sums_rows(rng):
    V = rand_pm(rng, 6, 4)
    scales = rng.random(4)
    out = gemm_mask_pm(pack_matrix(np.ones((2, 6), dtype=int), ZO), pack_matrix(V.T, PM), scales)
    np.testing.assert_allclose(out, np.tile(V.sum(axis=0) * scales, (2, 1)))


def test_gemm_mask_16x16_matches_naive(rng):
    A = rng.integers(0, 2, (16, 16))
    V = rand_pm(rng, 16, 16)
    out = gemm_mask_pm(pack_matrix(A, ZO), pack_matrix(V.T, PM), np.ones(16))
    ref = np.array([[naive_masked_sum(A[i], V[:, j]) for j in range(16)] for i in range(16)])
    np.testing.assert_array_equal(out, ref)


def test_bitmatrix_rows_are_vectors(rng):
    x = rand_pm(rng, 3, 130)
    M = pack_matrix(x, PM)
    assert isinstance(M, BitMatrix)
    for i in range(3):
        assert M.row(i) == pack(x[i], PM)
    np.testing.assert_array_equal(M.unpack(), x)
