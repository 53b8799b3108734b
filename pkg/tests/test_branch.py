"""Tests for the correlation branch: ICCF, IMF, and the reduced feature."""

import numpy as np
import pytest

from actf import branch as B
from actf import attention as A
from actf import sketch as S
from actf import tensor as T
from actf.errors import InputError, ShapeError


def t(x, grad=False):
    return T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def _params(c_out, d, seed=0, r1=None, r2=None):
    rng = np.random.default_rng(seed)
    c_cat = d + c_out
    r1 = r1 or max(1, c_cat // 2)
    r2 = r2 or 2 * c_out
    return B.ActfParams(
        plan=S.make_plan(c_out, d, seed),
        attn=A.init_temporal_attention(d, rng),
        pair_fusion=A.init_pair_fusion(),
        reduction=B.init_reduction(c_cat, r1, r2, c_out, rng),
    )


class TestLowLevelFeature:
    def test_requires_rank_four(self):
        with pytest.raises(ShapeError):
            B.LowLevelFeature(t(np.zeros((4, 3, 5))))

    def test_requires_two_frames(self):
        with pytest.raises(InputError):
            B.LowLevelFeature(t(np.zeros((1, 3, 5, 5))))

    def test_properties(self):
        F = B.LowLevelFeature(t(np.zeros((8, 16, 7, 7))))
        assert F.frames == 8
        assert F.channels == 16
        assert F.spatial == (7, 7)


class TestIccf:
    def test_zero_input(self):
        p = _params(c_out=4, d=8)
        F = B.LowLevelFeature(t(np.zeros((3, 4, 2, 2))))
        iccf = B.extract_iccf(F, p.plan, p.attn)
        np.testing.assert_array_equal(iccf.b.data, np.zeros((2, 8, 2, 2)))
        np.testing.assert_allclose(iccf.alpha.data, 0.5, atol=1e-12)

    def test_shapes(self):
        p = _params(c_out=6, d=20)
        F = B.LowLevelFeature(t(np.random.default_rng(1)
                                .standard_normal((5, 6, 3, 3))))
        iccf = B.extract_iccf(F, p.plan, p.attn)
        assert iccf.b.data.shape == (4, 20, 3, 3)
        assert iccf.alpha.data.shape == (4,)

    def test_manual_sketch_oracle(self):
        # t=2, 1x1 spatial: the single pair at the single location must be
        # CS1(f1) (x) CS2(f2) exactly, alpha = [1.0]
        rng = np.random.default_rng(2)
        c, d = 2, 4
        p = _params(c_out=c, d=d, seed=3)
        f = rng.standard_normal((2, c, 1, 1))
        F = B.LowLevelFeature(t(f))
        iccf = B.extract_iccf(F, p.plan, p.attn)
        np.testing.assert_allclose(iccf.alpha.data, [1.0], atol=1e-12)

        cs1 = np.zeros(d)
        cs2 = np.zeros(d)
        for j in range(c):
            cs1[p.plan.h1[j]] += p.plan.s1[j] * f[0, j, 0, 0]
            cs2[p.plan.h2[j]] += p.plan.s2[j] * f[1, j, 0, 0]
        manual = np.zeros(d)
        for i in range(d):
            for j in range(d):
                manual[(i + j) % d] += cs1[i] * cs2[j]
        np.testing.assert_allclose(iccf.b.data[0, :, 0, 0], manual,
                                   atol=1e-10)

    def test_attend_false_unit_weights(self):
        rng = np.random.default_rng(4)
        p = _params(c_out=3, d=8)
        F = B.LowLevelFeature(t(rng.standard_normal((4, 3, 2, 2))))
        iccf = B.extract_iccf(F, p.plan, p.attn, attend=False)
        np.testing.assert_array_equal(iccf.alpha.data, np.ones(3))


class TestImf:
    def test_time_constant(self):
        frame = np.random.default_rng(5).standard_normal((3, 4, 4))
        F = B.LowLevelFeature(t(np.stack([frame] * 6)))
        imf = B.extract_imf(F)
        assert imf.l.data.shape == (5, 3, 4, 4)
        for i in range(5):
            np.testing.assert_allclose(imf.l.data[i], frame, atol=1e-12)

    def test_pairwise_means(self):
        frames = np.stack([np.full((2, 3, 3), float(v)) for v in range(8)])
        F = B.LowLevelFeature(t(frames))
        imf = B.extract_imf(F)
        for i in range(7):
            np.testing.assert_allclose(imf.l.data[i], i + 0.5, atol=1e-12)


class TestExtractActf:
    def test_zero_input_zero_output(self):
        p = _params(c_out=3, d=6)
        for b in (p.reduction.b1, p.reduction.b2, p.reduction.b3):
            b.data = np.zeros_like(b.data)
        F = B.LowLevelFeature(t(np.zeros((3, 3, 2, 2))))
        out = B.extract_actf(F, p)
        np.testing.assert_allclose(out.data, np.zeros(3), atol=1e-15)

    def test_output_width(self):
        p = _params(c_out=5, d=12)
        F = B.LowLevelFeature(t(np.random.default_rng(6)
                                .standard_normal((4, 5, 2, 2))))
        out = B.extract_actf(F, p)
        assert out.data.shape == (5,)

    def test_manual_composition(self):
        # t=2, 1x1 spatial: sketch pair -> 0.5/0.5 fuse with the frame
        # mean -> global pool (identity here) -> 3-layer relu net
        rng = np.random.default_rng(7)
        c, d = 2, 4
        p = _params(c_out=c, d=d, seed=8)
        f = rng.standard_normal((2, c, 1, 1))
        F = B.LowLevelFeature(t(f))
        out = B.extract_actf(F, p)

        cs1 = np.zeros(d)
        cs2 = np.zeros(d)
        for j in range(c):
            cs1[p.plan.h1[j]] += p.plan.s1[j] * f[0, j, 0, 0]
            cs2[p.plan.h2[j]] += p.plan.s2[j] * f[1, j, 0, 0]
        pair = np.zeros(d)
        for i in range(d):
            for j in range(d):
                pair[(i + j) % d] += cs1[i] * cs2[j]
        l = f.mean(axis=0)[:, 0, 0]
        h = np.concatenate([0.5 * pair, 0.5 * l])

        red = p.reduction
        z = np.maximum(h @ red.w1.data + red.b1.data.ravel(), 0.0)
        z = np.maximum(z @ red.w2.data + red.b2.data.ravel(), 0.0)
        z = z @ red.w3.data + red.b3.data.ravel()
        np.testing.assert_allclose(out.data, z, atol=1e-9)

    def test_imf_weight_zero_removes_mean_path(self):
        # with the mean branch zeroed, the reduction rows that multiply
        # the mean block can be scrambled without changing the output
        rng = np.random.default_rng(9)
        p = _params(c_out=3, d=6)
        F = B.LowLevelFeature(t(rng.standard_normal((3, 3, 2, 2))))
        out_a = B.extract_actf(F, p, imf_weight_zero=True)
        p.reduction.w1.data[6:, :] = rng.standard_normal(
            p.reduction.w1.data[6:, :].shape)
        out_b = B.extract_actf(F, p, imf_weight_zero=True)
        np.testing.assert_allclose(out_a.data, out_b.data, atol=1e-12)

    def test_pooled_matches_naive_mean(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((6, 4, 3, 5))
        pooled = T.avg_pool(t(x), (6, 3, 5), (1, 1, 1)).data.ravel()
        naive = np.zeros(4)
        for c in range(4):
            acc = 0.0
            for i in range(6):
                for hh in range(3):
                    for ww in range(5):
                        acc += x[i, c, hh, ww]
            naive[c] = acc / (6 * 3 * 5)
        np.testing.assert_allclose(pooled, naive, atol=1e-12)


class TestReduction:
    def test_layer_widths(self):
        rng = np.random.default_rng(11)
        red = B.init_reduction(10, 5, 8, 4, rng)
        assert red.w1.data.shape == (10, 5)
        assert red.w2.data.shape == (5, 8)
        assert red.w3.data.shape == (8, 4)

    def test_zero_input_zero_biases(self):
        rng = np.random.default_rng(12)
        red = B.init_reduction(6, 3, 4, 2, rng)
        for b in (red.b1, red.b2, red.b3):
            b.data = np.zeros_like(b.data)
        out = red.apply(t(np.zeros(6)))
        np.testing.assert_allclose(out.data, np.zeros(2), atol=1e-15)
