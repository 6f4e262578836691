import math

import numpy as np
import pytest

from binary_vit.attention import AttentionConfig, AttentionLayer, binary_attention_forward, fp_attention
from binary_vit.binarizer import binarize_rows
from binary_vit.bitpack import gemm_pm_int
from binary_vit.errors import ConfigError, DimensionMismatch, InvalidBeta
from oracles import reference_binary_attention, softmax64

HEADS, HEAD_DIM = 2, 8
D = HEADS * HEAD_DIM


def make_weights(rng, scale=0.3):
    return {n: (rng.standard_normal((D, D)) * scale, rng.standard_normal(D) * 0.1)
            for n in ("q", "k", "v", "proj")}


def cfg(qkv=False, attn=False, beta=0.25):
    return AttentionConfig(HEADS, HEAD_DIM, beta, qkv, attn)


def test_fp_single_token_returns_value_row(rng):
    Q, K, V = rng.standard_normal((1, 4)), rng.standard_normal((1, 4)), rng.standard_normal((1, 6))
    np.testing.assert_array_equal(fp_attention(Q, K, V), V)


def test_fp_identical_keys_average_values(rng):
    K = np.tile(rng.standard_normal(4), (5, 1))
    V = rng.standard_normal((5, 3))
    out = fp_attention(rng.standard_normal((2, 4)), K, V)
    np.testing.assert_allclose(out, np.tile(V.mean(axis=0), (2, 1)), rtol=1e-12)


def test_fp_matches_loop_reference(rng):
    Q, K, V = (rng.standard_normal((4, 8)) for _ in range(3))
    out = fp_attention(Q, K, V)
    for i in range(4):
        s = [math.fsum(Q[i, t] * K[j, t] for t in range(8)) / math.sqrt(8) for j in range(4)]
        p = softmax64(s)
        for c in range(8):
            assert out[i, c] == pytest.approx(math.fsum(p[j] * V[j, c] for j in range(4)), rel=1e-12, abs=1e-14)


def test_shape_errors(rng):
    with pytest.raises(DimensionMismatch):
        fp_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 4)))
    layer = AttentionLayer.build(make_weights(rng))
    with pytest.raises(DimensionMismatch):
        binary_attention_forward(np.zeros((3, D + 1)), layer, cfg())
    with pytest.raises(ConfigError):
        binary_attention_forward(np.zeros((3, D)), layer, cfg(qkv=True))
    with pytest.raises(InvalidBeta):
        cfg(beta=1.0)


def test_flags_off_is_fp_attention_with_fp_projections(rng):
    w = make_weights(rng)
    X = rng.standard_normal((6, D))
    out = binary_attention_forward(X, AttentionLayer.build(w), cfg())
    Q, K, V = (X @ w[n][0].T + w[n][1] for n in ("q", "k", "v"))
    heads = [fp_attention(Q[:, s], K[:, s], V[:, s])
             for s in (slice(0, HEAD_DIM), slice(HEAD_DIM, D))]
    expected = np.concatenate(heads, axis=1) @ w["proj"][0].T + w["proj"][1]
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("qkv,attn", [(True, True), (True, False), (False, True)])
def test_packed_path_matches_unpacked_reference(rng, qkv, attn):
    w = make_weights(rng)
    X = rng.standard_normal((10, D))
    layer = AttentionLayer.build(w, binarize=qkv)
    inter = {}
    out = binary_attention_forward(X, layer, cfg(qkv, attn), intermediates=inter)
    ref, _ = reference_binary_attention(X, w, HEADS, 0.25, qkv, attn)
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_integer_score_stage_is_exact(rng):
    w = make_weights(rng)
    X = rng.standard_normal((12, D))
    layer = AttentionLayer.build(w, binarize=True)
    bits, xs = binarize_rows(X)
    Q = layer.binary["q"].forward_binary(bits, xs) + w["q"][1]
    K = layer.binary["k"].forward_binary(bits, xs) + w["k"][1]
    _, ref_ints = reference_binary_attention(X, w, HEADS, 0.25, True, True)
    for h in range(HEADS):
        c = slice(h * HEAD_DIM, (h + 1) * HEAD_DIM)
        got = gemm_pm_int(binarize_rows(Q[:, c])[0], binarize_rows(K[:, c])[0])
        np.testing.assert_array_equal(got, ref_ints[h])


def test_softmax_rows_valid_and_argmax_active(rng):
    w = make_weights(rng, scale=1.0)
    X = rng.standard_normal((15, D))
    inter = {}
    binary_attention_forward(X, AttentionLayer.build(w, True), cfg(True, True), intermediates=inter)
    for probs, mask in zip(inter["softmax"], inter["masks"]):
        assert (probs >= 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)
        assert (mask[np.arange(15), probs.argmax(axis=1)] == 1).all()


def test_uniform_attention_sums_binarized_values(rng):
    w = make_weights(rng)
    w["k"] = (np.zeros((D, D)), w["k"][1])  # every key identical -> uniform rows
    X = rng.standard_normal((5, D))
    layer = AttentionLayer.build(w, binarize=True)
    inter = {}
    out = binary_attention_forward(X, layer, cfg(True, True), intermediates=inter)
    for mask in inter["masks"]:
        np.testing.assert_array_equal(mask, np.ones((5, 5)))
    bits, xs = binarize_rows(X)
    V = layer.binary["v"].forward_binary(bits, xs) + w["v"][1]
    ctx = []
    for h in range(HEADS):
        Vt = V[:, h * HEAD_DIM:(h + 1) * HEAD_DIM].T
        vb, vs = binarize_rows(Vt)
        ctx.append(np.tile((vb.unpack().sum(axis=1) * vs), (5, 1)))
    merged = np.concatenate(ctx, axis=1)
    mb, ms = binarize_rows(merged)
    expected = layer.binary["proj"].forward_binary(mb, ms) + w["proj"][1]
    np.testing.assert_allclose(out, expected, rtol=1e-13)


@pytest.mark.parametrize("beta", [0.05, 0.5, 0.95])
def test_single_token_independent_of_beta(rng, beta):
    w = make_weights(rng)
    X = rng.standard_normal((1, D))
    layer = AttentionLayer.build(w, True)
    out = binary_attention_forward(X, layer, cfg(True, True, beta))
    ref = binary_attention_forward(X, layer, cfg(True, True, 0.25))
    np.testing.assert_array_equal(out, ref)
    assert math.isfinite(out.sum())
