import math

import numpy as np
import pytest

from slimmatch import tensor as T
from slimmatch.attention import (
    AttentionParams,
    LayerRoles,
    RopeTable,
    TokenSeq,
    attention_layer,
    feed_forward,
    init_attention,
    init_layer_roles,
    interleave,
    rope_encode,
    rope_table,
    sinusoidal_encoding,
    vector_attention,
)
from slimmatch.rng import Xorshift64Star
from slimmatch.tensor import DiffTensor, FlopLedger, ShapeError, record_flops


def rope_matrix(coords_rc, channels):
    """Oracle: the explicit block-diagonal rotation matrix for one token."""
    table = RopeTable(channels)
    ang = table.angles(np.asarray(coords_rc).reshape(1, 2))[0]
    m = np.zeros((channels, channels))
    for blk, a in enumerate(ang):
        c, s = math.cos(a), math.sin(a)
        m[2 * blk, 2 * blk] = c
        m[2 * blk, 2 * blk + 1] = -s
        m[2 * blk + 1, 2 * blk] = s
        m[2 * blk + 1, 2 * blk + 1] = c
    return m


def oracle_vector_attention(u, coords_u, r, coords_r, p, use_rope=True):
    """Straight-line numpy re-evaluation of the attention equations."""
    c = u.shape[1]
    q = u @ p.w_q.weight.data
    k = r @ p.w_k.weight.data
    v = r @ p.w_v.weight.data
    if use_rope:
        q = np.stack([rope_matrix(cc, c) @ qq for qq, cc in zip(q, coords_u)])
        k = np.stack([rope_matrix(cc, c) @ kk for kk, cc in zip(k, coords_r)])

    def imp(x, w):
        s = (x @ w.weight.data) / math.sqrt(c)
        e = np.exp(s - s.max())
        weights = e / e.sum()
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        return weights

    q_w = imp(q, p.q_imp)
    q_global = (q_w * q).sum(axis=0, keepdims=True)
    k_ctx = q_global * k
    k_w = imp(k_ctx, p.k_imp)
    k_global = (k_w * k_ctx).sum(axis=0, keepdims=True)
    lam = k_global * v
    return lam @ p.msg.weight.data + p.msg.bias.data + q


@pytest.fixture
def params8():
    return init_attention(8, ffn_scale=4, rng=Xorshift64Star(31))


def seq(tokens, coords):
    return TokenSeq(DiffTensor(np.asarray(tokens, dtype=np.float64)),
                    np.asarray(coords))


class TestRope:
    def test_origin_is_identity(self):
        x = np.random.default_rng(0).standard_normal((5, 8))
        out = rope_encode(DiffTensor(x), np.zeros((5, 2), dtype=int))
        np.testing.assert_allclose(out.data, x, atol=1e-15)

    def test_closed_form_single_block(self):
        # C=4: one x-block, one y-block, theta_1 = 1
        x = np.array([[1.0, 0.0, 0.0, 0.0]])
        out = rope_encode(DiffTensor(x), np.array([[0, 1]]))  # row 0, col 1
        np.testing.assert_allclose(out.data[0, :2], [math.cos(1), math.sin(1)], atol=1e-15)
        np.testing.assert_allclose(out.data[0, 2:], 0.0)

    def test_theta_schedule(self):
        table = rope_table(16)
        assert table.thetas[0] == 1.0
        assert (np.diff(table.thetas) < 0).all()

    def test_norm_preserved_1000_tokens(self):
        g = np.random.default_rng(1)
        x = g.standard_normal((1000, 16))
        coords = g.integers(0, 64, (1000, 2))
        out = rope_encode(DiffTensor(x), coords)
        before = np.linalg.norm(x, axis=1)
        after = np.linalg.norm(out.data, axis=1)
        assert np.abs(after - before).max() <= 1e-12

    def test_relative_dot_product_identity_1000(self):
        g = np.random.default_rng(2)
        f = g.standard_normal((1000, 16))
        h = g.standard_normal((1000, 16))
        ci = g.integers(0, 40, (1000, 2))
        cj = g.integers(0, 40, (1000, 2))
        lhs = (rope_encode(DiffTensor(f), ci).data * rope_encode(DiffTensor(h), cj).data).sum(1)
        rhs = (f * rope_encode(DiffTensor(h), cj - ci).data).sum(1)
        assert np.abs(lhs - rhs).max() <= 1e-10

    def test_matches_block_matrix_oracle(self):
        g = np.random.default_rng(3)
        x = g.standard_normal((4, 12))
        coords = g.integers(0, 9, (4, 2))
        out = rope_encode(DiffTensor(x), coords)
        expect = np.stack([rope_matrix(c, 12) @ row for row, c in zip(x, coords)])
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_channels_not_divisible_by_four(self):
        with pytest.raises(ValueError):
            rope_table(6)


class TestVectorAttention:
    def test_single_key_token_oracle(self, params8):
        g = np.random.default_rng(4)
        u = g.standard_normal((5, 8))
        r = g.standard_normal((1, 8))
        cu = g.integers(0, 8, (5, 2))
        cr = np.array([[2, 3]])
        out = vector_attention(seq(u, cu), seq(r, cr), params8)
        np.testing.assert_allclose(
            out.data, oracle_vector_attention(u, cu, r, cr, params8), atol=1e-12)

    def test_matches_oracle_equal_lengths(self, params8):
        g = np.random.default_rng(5)
        u = g.standard_normal((6, 8))
        r = g.standard_normal((6, 8))
        cu = g.integers(0, 8, (6, 2))
        cr = g.integers(0, 8, (6, 2))
        out = vector_attention(seq(u, cu), seq(r, cr), params8)
        np.testing.assert_allclose(
            out.data, oracle_vector_attention(u, cu, r, cr, params8), atol=1e-12)

    def test_identical_rows_make_global_query_that_row(self, params8):
        # all query rows equal q: the importance-weighted combination is q
        # itself, so the message is unchanged by the importance weights
        g = np.random.default_rng(6)
        row = g.standard_normal(8)
        u = np.tile(row, (7, 1))
        coords = np.zeros((7, 2), dtype=int)  # same position: rope identical too
        r = g.standard_normal((7, 8))
        cr = np.zeros((7, 2), dtype=int)
        out = vector_attention(seq(u, coords), seq(r, cr), params8)
        # tilt the importance projection; result must not change
        params8.q_imp.weight.data[:] = g.standard_normal((8, 1))
        out2 = vector_attention(seq(u, coords), seq(r, cr), params8)
        np.testing.assert_allclose(out.data, out2.data, atol=1e-12)

    def test_mac_count_doubles_with_tokens(self, params8):
        def macs(n):
            g = np.random.default_rng(7)
            u = seq(g.standard_normal((n, 8)), g.integers(0, 9, (n, 2)))
            led = FlopLedger()
            with record_flops(led):
                vector_attention(u, u, params8)
            return led.total()

        assert macs(64) * 2 == macs(128)
        assert macs(128) * 2 == macs(256)

    def test_channel_mismatch(self, params8):
        u = seq(np.zeros((4, 8)), np.zeros((4, 2)))
        r = seq(np.zeros((4, 12)), np.zeros((4, 2)))
        with pytest.raises(ShapeError):
            vector_attention(u, r, params8)

    def test_batched_matches_per_window(self, params8):
        g = np.random.default_rng(8)
        wins = g.standard_normal((3, 6, 8))
        coords = g.integers(0, 5, (6, 2))
        batched = vector_attention(
            TokenSeq(DiffTensor(wins), coords), TokenSeq(DiffTensor(wins), coords), params8)
        for i in range(3):
            single = vector_attention(seq(wins[i], coords), seq(wins[i], coords), params8)
            np.testing.assert_allclose(batched.data[i], single.data, atol=1e-12)


class TestFeedForward:
    def test_hidden_width_full_scale(self):
        p = init_attention(192, ffn_scale=4, rng=Xorshift64Star(0))
        assert p.ffn1.weight.shape == (384, 768)
        assert p.ffn2.weight.shape == (768, 192)

    def test_zero_weights_zero_output(self, params8):
        for name in ("ffn1", "ffn2"):
            lin = getattr(params8, name)
            lin.weight.data[:] = 0.0
            lin.bias.data[:] = 0.0
        g = np.random.default_rng(9)
        out = feed_forward(DiffTensor(g.standard_normal((5, 8))),
                           DiffTensor(g.standard_normal((5, 8))), params8)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_gradient(self, params8):
        g = np.random.default_rng(10)
        u = DiffTensor(g.standard_normal((4, 8)), requires_grad=True)
        m = DiffTensor(g.standard_normal((4, 8)), requires_grad=True)
        leaves = [u, m, params8.ffn1.weight, params8.ffn1.bias,
                  params8.ffn2.weight, params8.ffn2.bias]
        coords = [(i, j) for i in range(len(leaves)) for j in (0, 1)]
        err = T.finite_diff_check(
            lambda: T.reduce_sum(T.mul(feed_forward(u, m, params8),
                                       feed_forward(u, m, params8))),
            leaves, step=1e-5, coords=coords)
        assert err < 1e-4


class TestAttentionLayer:
    def test_zero_layer_scale_is_identity(self, params8):
        params8.layer_scale.data[...] = 0.0
        g = np.random.default_rng(11)
        u = seq(g.standard_normal((5, 8)), g.integers(0, 4, (5, 2)))
        out = attention_layer(u, u, params8)
        np.testing.assert_array_equal(out.data if hasattr(out, "data") else out.tokens.data,
                                      u.tokens.data)

    def test_unit_scale_zero_ffn_is_identity(self, params8):
        params8.layer_scale.data[...] = 1.0
        for name in ("ffn1", "ffn2"):
            lin = getattr(params8, name)
            lin.weight.data[:] = 0.0
            lin.bias.data[:] = 0.0
        g = np.random.default_rng(12)
        u = seq(g.standard_normal((5, 8)), g.integers(0, 4, (5, 2)))
        out = attention_layer(u, u, params8)
        np.testing.assert_array_equal(out.tokens.data, u.tokens.data)

    def test_against_straight_line_oracle(self, params8):
        g = np.random.default_rng(13)
        u = g.standard_normal((6, 8))
        r = g.standard_normal((6, 8))
        cu = g.integers(0, 6, (6, 2))
        cr = g.integers(0, 6, (6, 2))
        out = attention_layer(seq(u, cu), seq(r, cr), params8)
        m = oracle_vector_attention(u, cu, r, cr, params8)
        cat = np.concatenate([u, m], axis=1)
        from scipy.special import erf
        hid = cat @ params8.ffn1.weight.data + params8.ffn1.bias.data
        hid = hid * 0.5 * (1.0 + erf(hid / math.sqrt(2)))
        branch = hid @ params8.ffn2.weight.data + params8.ffn2.bias.data
        expect = u + float(params8.layer_scale.data) * branch
        np.testing.assert_allclose(out.tokens.data, expect, atol=1e-12)

    def test_mac_count_affine_in_tokens(self, params8):
        def layer_macs(n):
            g = np.random.default_rng(14)
            u = seq(g.standard_normal((n, 8)), g.integers(0, 9, (n, 2)))
            led = FlopLedger()
            with record_flops(led):
                attention_layer(u, u, params8)
            return led.total()

        m64, m128, m256 = layer_macs(64), layer_macs(128), layer_macs(256)
        slope = (m128 - m64) // 64
        intercept = m64 - 64 * slope
        assert (m128 - m64) % 64 == 0
        assert m256 == 256 * slope + intercept


class TestInterleave:
    def test_zero_scales_leave_inputs_unchanged(self):
        rng = Xorshift64Star(41)
        layers = [init_layer_roles(8, 4, rng) for _ in range(3)]
        for roles in layers:
            for p in (roles.self_a, roles.self_b, roles.cross_a, roles.cross_b):
                p.layer_scale.data[...] = 0.0
        g = np.random.default_rng(15)
        a = seq(g.standard_normal((4, 8)), g.integers(0, 2, (4, 2)))
        b = seq(g.standard_normal((4, 8)), g.integers(0, 2, (4, 2)))
        a2, b2 = interleave(a, b, layers)
        np.testing.assert_array_equal(a2.tokens.data, a.tokens.data)
        np.testing.assert_array_equal(b2.tokens.data, b.tokens.data)

    def test_single_depth_equals_manual_composition(self):
        roles = init_layer_roles(8, 4, Xorshift64Star(42))
        g = np.random.default_rng(16)
        a = seq(g.standard_normal((5, 8)), g.integers(0, 3, (5, 2)))
        b = seq(g.standard_normal((5, 8)), g.integers(0, 3, (5, 2)))
        a2, b2 = interleave(a, b, [roles])
        sa = attention_layer(a, a, roles.self_a)
        sb = attention_layer(b, b, roles.self_b)
        ca = attention_layer(sa, sb, roles.cross_a)
        cb = attention_layer(sb, ca, roles.cross_b)
        np.testing.assert_array_equal(a2.tokens.data, ca.tokens.data)
        np.testing.assert_array_equal(b2.tokens.data, cb.tokens.data)

    def test_deterministic(self):
        roles = [init_layer_roles(8, 4, Xorshift64Star(43)) for _ in range(2)]
        g = np.random.default_rng(17)
        a = seq(g.standard_normal((4, 8)), g.integers(0, 2, (4, 2)))
        b = seq(g.standard_normal((4, 8)), g.integers(0, 2, (4, 2)))
        first = interleave(a, b, roles)
        second = interleave(a, b, roles)
        assert np.array_equal(first[0].tokens.data, second[0].tokens.data)
        assert np.array_equal(first[1].tokens.data, second[1].tokens.data)

    def test_gradient_through_stack(self):
        roles = [init_layer_roles(8, 4, Xorshift64Star(44))]
        g = np.random.default_rng(18)
        a = seq(g.standard_normal((4, 8)), g.integers(0, 2, (4, 2)))
        b = seq(g.standard_normal((4, 8)), g.integers(0, 2, (4, 2)))
        leaves = [leaf for _, leaf in roles[0].leaves("l0")]

        def f():
            a2, b2 = interleave(a, b, roles)
            return T.add(T.reduce_sum(a2.tokens), T.reduce_sum(b2.tokens))

        coords = [(i, 0) for i in range(len(leaves))]
        assert T.finite_diff_check(f, leaves, step=1e-5, coords=coords) < 1e-4


class TestSinusoidalEncoding:
    def test_shape_and_range(self):
        pe = sinusoidal_encoding(np.array([[0, 0], [1, 2], [3, 1]]), 8)
        assert pe.shape == (3, 8)
        assert (np.abs(pe) <= 1.0).all()

    def test_origin_alternates_zero_one(self):
        pe = sinusoidal_encoding(np.zeros((1, 2), dtype=int), 8)
        np.testing.assert_allclose(pe[0, 0::2], 0.0)
        np.testing.assert_allclose(pe[0, 1::2], 1.0)
