"""Tests for the dense tensor operations.

Forward passes are checked against independent loop implementations written
directly from the operation definitions; backward passes against central
finite differences at points away from kinks and ties.
"""

import numpy as np
import pytest

from advrsa import tensor_ops as T


# ---------------------------------------------------------------------------
# independent loop oracles
# ---------------------------------------------------------------------------

def conv2d_loops(x, kernels, bias, stride=1, padding=0):
    c_out, c_in, kh, kw = kernels.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    h_out = (xp.shape[1] - kh) // stride + 1
    w_out = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for co in range(c_out):
        for oh in range(h_out):
            for ow in range(w_out):
                acc = 0.0
                for ci in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[ci, oh * stride + i, ow * stride + j] * kernels[co, ci, i, j]
                out[co, oh, ow] = acc + bias[co]
    return out


def maxpool2d_loops(x, window, stride):
    c, h, w = x.shape
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    out = np.empty((c, h_out, w_out))
    arg = np.empty((c, h_out, w_out), dtype=np.int64)
    for ci in range(c):
        for oh in range(h_out):
            for ow in range(w_out):
                best = -np.inf
                best_idx = -1
                for i in range(window):
                    for j in range(window):
                        r, s = oh * stride + i, ow * stride + j
                        if x[ci, r, s] > best:  # strict: first max wins
                            best = x[ci, r, s]
                            best_idx = r * w + s
                out[ci, oh, ow] = best
                arg[ci, oh, ow] = best_idx
    return out, arg


def lrn_loops(x, k, alpha, beta, n):
    c = x.shape[0]
    half = (n - 1) // 2
    out = np.empty_like(x)
    for ci in range(c):
        lo, hi = max(0, ci - half), min(c - 1, ci + half)
        s = sum(x[cj] ** 2 for cj in range(lo, hi + 1))
        out[ci] = x[ci] / (k + alpha * s) ** beta
    return out


def central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

class TestConv2d:
    def test_scalar_kernel_doubles(self):
        x = np.arange(12.0).reshape(1, 3, 4)
        k = np.full((1, 1, 1, 1), 2.0)
        out = T.conv2d(x, k, np.zeros(1))
        assert np.array_equal(out, 2.0 * x)

    def test_all_ones_kernel_sums_window(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        k = np.ones((1, 1, 2, 2))
        out = T.conv2d(x, k, np.zeros(1))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 10.0

    def test_bias_added_per_channel(self):
        x = np.zeros((1, 3, 3))
        k = np.zeros((2, 1, 2, 2))
        out = T.conv2d(x, k, np.array([1.5, -2.0]))
        assert np.all(out[0] == 1.5) and np.all(out[1] == -2.0)

    def test_matches_loop_oracle_random(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            c_in, c_out = rng.integers(1, 4, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 2))
            h = int(rng.integers(kh, kh + 5))
            w = int(rng.integers(kw, kw + 5))
            x = rng.standard_normal((c_in, h, w))
            k = rng.standard_normal((c_out, c_in, kh, kw))
            b = rng.standard_normal(c_out)
            got = T.conv2d(x, k, b, stride=stride, padding=padding)
            want = conv2d_loops(x, k, b, stride=stride, padding=padding)
            assert got.shape == want.shape
            assert np.max(np.abs(got - want)) < 1e-12

    def test_channel_mismatch_raises(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            T.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 2, 2)), np.zeros(1))

    def test_kernel_too_large_raises(self):
        with pytest.raises(ValueError, match="does not fit"):
            T.conv2d(np.zeros((1, 3, 3)), np.zeros((1, 1, 5, 5)), np.zeros(1))

    def test_bad_bias_raises(self):
        with pytest.raises(ValueError, match="bias"):
            T.conv2d(np.zeros((1, 4, 4)), np.zeros((2, 1, 2, 2)), np.zeros(3))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 6, 5))
        k = rng.standard_normal((3, 2, 3, 2))
        b = rng.standard_normal(3)
        v = rng.standard_normal(T.conv2d(x, k, b, stride=2, padding=1).shape)

        def scalar(x_, k_, b_):
            return float(np.sum(T.conv2d(x_, k_, b_, stride=2, padding=1) * v))

        gx, gk, gb = T.conv2d_backward(x, k, v, stride=2, padding=1)
        assert np.max(np.abs(gx - central_diff(lambda a: scalar(a, k, b), x.copy()))) < 1e-8
        assert np.max(np.abs(gk - central_diff(lambda a: scalar(x, a, b), k.copy()))) < 1e-8
        assert np.max(np.abs(gb - central_diff(lambda a: scalar(x, k, a), b.copy()))) < 1e-8


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------

class TestMaxpool2d:
    def test_four_by_four(self):
        x = np.arange(1.0, 17.0).reshape(1, 4, 4)
        out, arg = T.maxpool2d(x, 2)
        assert np.array_equal(out[0], [[6.0, 8.0], [14.0, 16.0]])
        assert np.array_equal(arg[0], [[5, 7], [13, 15]])

    def test_tie_goes_to_first_in_row_major_order(self):
        x = np.full((1, 2, 2), 3.0)
        out, arg = T.maxpool2d(x, 2)
        assert out[0, 0, 0] == 3.0
        assert arg[0, 0, 0] == 0

    def test_matches_loop_oracle_random(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            c = int(rng.integers(1, 4))
            window = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 4))
            h = int(rng.integers(window, window + 6))
            w = int(rng.integers(window, window + 6))
            # quantized values so ties actually occur and exercise the break rule
            x = np.floor(rng.uniform(0, 4, size=(c, h, w)))
            got, garg = T.maxpool2d(x, window, stride)
            want, warg = maxpool2d_loops(x, window, stride)
            assert np.array_equal(got, want)
            assert np.array_equal(garg, warg)

    def test_window_exceeding_extent_raises(self):
        with pytest.raises(ValueError, match="exceeds"):
            T.maxpool2d(np.zeros((1, 3, 3)), 4)

    def test_backward_routes_to_argmax_cells(self):
        x = np.arange(1.0, 17.0).reshape(1, 4, 4)
        out, arg = T.maxpool2d(x, 2)
        g = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        gx = T.maxpool2d_backward(g, arg, x.shape)
        want = np.zeros((1, 4, 4))
        want[0, 1, 1], want[0, 1, 3], want[0, 3, 1], want[0, 3, 3] = 1.0, 2.0, 3.0, 4.0
        assert np.array_equal(gx, want)

    def test_backward_accumulates_overlapping_windows(self):
        # stride 1 with window 2: the global max feeds every window containing it
        x = np.zeros((1, 3, 3))
        x[0, 1, 1] = 5.0
        out, arg = T.maxpool2d(x, 2, stride=1)
        gx = T.maxpool2d_backward(np.ones((1, 2, 2)), arg, x.shape)
        assert gx[0, 1, 1] == 4.0

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        # well-separated values: no ties, so pooling is locally linear
        x = rng.permutation(np.arange(36.0)).reshape(1, 6, 6)
        out, arg = T.maxpool2d(x, 3, stride=2)
        v = rng.standard_normal(out.shape)

        def scalar(x_):
            return float(np.sum(T.maxpool2d(x_, 3, stride=2)[0] * v))

        gx = T.maxpool2d_backward(v, arg, x.shape)
        # values of magnitude ~35 leave ~1e-8 of truncation noise in the quotient
        assert np.max(np.abs(gx - central_diff(scalar, x.copy()))) < 1e-7


# ---------------------------------------------------------------------------
# local response normalization
# ---------------------------------------------------------------------------

class TestLrn:
    def test_alpha_zero_divides_by_k_pow_beta(self):
        x = np.random.default_rng(0).standard_normal((3, 2, 2))
        out = T.lrn(x, k=2.0, alpha=0.0, beta=0.75, n=3)
        assert np.allclose(out, x / 2.0 ** 0.75, atol=1e-15)

    def test_single_channel_self_normalization(self):
        v = np.array([[[0.5, -1.5], [2.0, 0.0]]])
        out = T.lrn(v, k=1.0, alpha=1.0, beta=1.0, n=1)
        assert np.allclose(out, v / (1.0 + v * v), atol=1e-15)

    def test_matches_loop_oracle_random(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            c = int(rng.integers(1, 8))
            n = int(rng.choice([1, 3, 5]))
            x = rng.standard_normal((c, 3, 2))
            k, alpha, beta = rng.uniform(0.5, 2.0), rng.uniform(0.0, 1.0), rng.uniform(0.5, 1.0)
            got = T.lrn(x, k, alpha, beta, n)
            want = lrn_loops(x, k, alpha, beta, n)
            assert np.max(np.abs(got - want)) < 1e-12

    def test_even_window_raises(self):
        with pytest.raises(ValueError, match="odd"):
            T.lrn(np.zeros((2, 2, 2)), 1.0, 1.0, 0.75, 2)

    def test_nonpositive_k_raises(self):
        with pytest.raises(ValueError, match="k"):
            T.lrn(np.zeros((2, 2, 2)), 0.0, 1.0, 0.75, 1)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((5, 3, 2))
        v = rng.standard_normal(x.shape)
        k, alpha, beta, n = 1.7, 0.3, 0.75, 3

        def scalar(x_):
            return float(np.sum(T.lrn(x_, k, alpha, beta, n) * v))

        gx = T.lrn_backward(x, v, k, alpha, beta, n)
        assert np.max(np.abs(gx - central_diff(scalar, x.copy()))) < 1e-8


# ---------------------------------------------------------------------------
# relu / affine
# ---------------------------------------------------------------------------

class TestReluAffine:
    def test_relu_clamps_negatives(self):
        x = np.array([-2.0, 0.0, 3.0])
        assert np.array_equal(T.relu(x), [0.0, 0.0, 3.0])

    def test_relu_backward_zero_at_kink(self):
        g = T.relu_backward(np.array([-1.0, 0.0, 2.0]), np.ones(3))
        assert np.array_equal(g, [0.0, 0.0, 1.0])

    def test_identity_affine(self):
        x = np.array([1.0, -2.0, 3.0])
        out = T.affine(x, np.eye(3), np.zeros(3))
        assert np.array_equal(out, x)

    def test_affine_matches_matmul(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.standard_normal(6), rng.standard_normal((4, 6)), rng.standard_normal(4)
        assert np.allclose(T.affine(x, w, b), w @ x + b, atol=0)

    def test_affine_dimension_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            T.affine(np.zeros(3), np.zeros((2, 4)), np.zeros(2))

    def test_affine_backward_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        x, w, b = rng.standard_normal(5), rng.standard_normal((3, 5)), rng.standard_normal(3)
        v = rng.standard_normal(3)
        gx, gw, gb = T.affine_backward(x, w, v)
        assert np.max(np.abs(gx - central_diff(lambda a: float(T.affine(a, w, b) @ v), x.copy()))) < 1e-8
        assert np.max(np.abs(gw - central_diff(lambda a: float(T.affine(x, a, b) @ v), w.copy()))) < 1e-8
        assert np.max(np.abs(gb - central_diff(lambda a: float(T.affine(x, w, a) @ v), b.copy()))) < 1e-8


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------

class TestSoftmax:
    def test_uniform_logits_give_uniform_probs_and_log_c_loss(self):
        probs, loss = T.softmax_xent(np.zeros(4), 2)
        assert np.allclose(probs, 0.25, atol=1e-15)
        assert abs(loss - np.log(4.0)) < 1e-12

    def test_extreme_logits_stay_finite(self):
        probs, loss = T.softmax_xent(np.array([1000.0, 0.0]), 1)
        assert np.isfinite(probs).all()
        assert np.isfinite(loss)
        assert abs(loss - 1000.0) < 1e-9

    def test_probs_sum_to_one(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            p = T.softmax(rng.standard_normal(int(rng.integers(2, 10))) * 10)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p >= 0)

    def test_label_out_of_range_raises(self):
        with pytest.raises(ValueError, match="label"):
            T.softmax_xent(np.zeros(3), 3)

    def test_single_class_raises(self):
        with pytest.raises(ValueError, match=">= 2"):
            T.softmax_xent(np.zeros(1), 0)

    def test_xent_backward_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        z = rng.standard_normal(6)
        probs, _ = T.softmax_xent(z, 4)
        g = T.softmax_xent_backward(probs, 4)
        want = central_diff(lambda a: T.softmax_xent(a, 4)[1], z.copy())
        assert np.max(np.abs(g - want)) < 1e-8

    def test_softmax_backward_matches_finite_differences(self):
        rng = np.random.default_rng(43)
        z = rng.standard_normal(5)
        v = rng.standard_normal(5)
        g = T.softmax_backward(T.softmax(z), v)
        want = central_diff(lambda a: float(T.softmax(a) @ v), z.copy())
        assert np.max(np.abs(g - want)) < 1e-8


# ---------------------------------------------------------------------------
# randomized shape sweep: vectorized forward == loop oracle on >= 100 configs
# ---------------------------------------------------------------------------

def test_forward_ops_match_loop_oracles_across_random_shapes():
    rng = np.random.default_rng(2026)
    checked = 0
    for trial in range(40):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        kh = int(rng.integers(1, 4))
        kw = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        h = int(rng.integers(max(kh, 2), max(kh, 2) + 6))
        w = int(rng.integers(max(kw, 2), max(kw, 2) + 6))
        x = rng.standard_normal((c_in, h, w))

        k = rng.standard_normal((c_out, c_in, kh, kw))
        b = rng.standard_normal(c_out)
        assert np.max(np.abs(
            T.conv2d(x, k, b, stride=stride, padding=padding)
            - conv2d_loops(x, k, b, stride=stride, padding=padding)
        )) < 1e-12
        checked += 1

        window = int(rng.integers(1, min(h, w) + 1))
        pstride = int(rng.integers(1, window + 1))
        got, garg = T.maxpool2d(x, window, pstride)
        want, warg = maxpool2d_loops(x, window, pstride)
        assert np.array_equal(got, want) and np.array_equal(garg, warg)
        checked += 1

        n = int(rng.choice([1, 3, 5]))
        kk = float(rng.uniform(0.5, 2.0))
        aa = float(rng.uniform(0.0, 1.5))
        bb = float(rng.uniform(0.3, 1.2))
        assert np.max(np.abs(T.lrn(x, kk, aa, bb, n) - lrn_loops(x, kk, aa, bb, n))) < 1e-12
        checked += 1
    assert checked >= 100
