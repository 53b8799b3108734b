"""Classifier assembly, ablation variants, and checkpoint round-trips."""

import numpy as np
import pytest

from actf import model as M
from actf import tensor as T
from actf.errors import ConfigError, FormatError


def tiny_dims(**kw):
    base = dict(frames=4, height=16, width=16, conv1_channels=3,
                out_channels=8, sketch_dim=32, n_classes=3)
    base.update(kw)
    return M.ModelDims(**base)


def t(x, grad=False):
    return T.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestDims:
    def test_derived_widths(self):
        d = tiny_dims()
        assert d.concat_channels == 32 + 8
        assert d.feature_spatial == (4, 4)

    def test_spatial_must_divide(self):
        with pytest.raises(ConfigError):
            tiny_dims(height=18)

    def test_reduction_defaults(self):
        d = tiny_dims()
        assert d.r1 == (32 + 8) // 2
        assert d.r2 == 2 * 8


class TestForward:
    def test_logit_width(self):
        dims = M.ModelDims(frames=8, height=32, width=32, conv1_channels=4,
                           out_channels=8, sketch_dim=16, n_classes=4)
        p = M.init_params(dims, 0, "full")
        video = t(np.random.default_rng(0)
                  .standard_normal((8, 3, 32, 32)) * 0.1)
        logits = M.forward(video, p)
        assert logits.data.shape == (4,)

    def test_zero_video_zero_biases(self):
        dims = tiny_dims()
        p = M.init_params(dims, 0, "full")
        for name, tensor in M.named_tensors(p):
            if name.endswith(("b1", "b2", "b3", "clf.b")) or name.endswith(".b"):
                tensor.data = np.zeros_like(tensor.data)
        logits = M.forward(t(np.zeros((4, 3, 16, 16))), p)
        np.testing.assert_allclose(logits.data, np.zeros(3), atol=1e-15)

    def test_spatial_only_order_invariant(self):
        dims = tiny_dims()
        p = M.init_params(dims, 1, "spatial-only")
        video = np.random.default_rng(1).standard_normal((4, 3, 16, 16))
        fwd = M.forward(t(video), p).data
        rev = M.forward(t(video[::-1].copy()), p).data
        np.testing.assert_allclose(fwd, rev, atol=1e-12)

    def test_full_is_order_sensitive(self):
        dims = tiny_dims()
        p = M.init_params(dims, 1, "full")
        video = np.random.default_rng(2).standard_normal((4, 3, 16, 16))
        fwd = M.forward(t(video), p).data
        rev = M.forward(t(video[::-1].copy()), p).data
        assert not np.allclose(fwd, rev, atol=1e-8)

    def test_loss_uniform_logits(self):
        val = M.loss(t(np.zeros(4)), 0)
        assert float(val.data) == pytest.approx(np.log(4.0), abs=1e-12)


class TestVariants:
    def test_variant_list(self):
        assert set(M.VARIANTS) == {"full", "single-actf", "iccf-only",
                                   "no-attn", "spatial-only"}

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            M.init_params(tiny_dims(), 0, "everything")

    def test_full_vs_single_actf_params(self):
        # same trainable set except the final-fusion scalars and head width
        dims = tiny_dims()
        full = {n for n, _, _ in
                M.trainable_parameters(M.init_params(dims, 0, "full"))}
        single = {n for n, _, _ in
                  M.trainable_parameters(M.init_params(dims, 0, "single-actf"))}
        assert full - single == {"final_fusion.raw_a", "final_fusion.raw_b"}

    def test_no_attn_excludes_attention(self):
        dims = tiny_dims()
        names = {n for n, _, _ in
                 M.trainable_parameters(M.init_params(dims, 0, "no-attn"))}
        assert "attn.proj" not in names
        assert "pair_fusion.raw_a" not in names

    def test_make_ablation_shares_backbone(self):
        dims = tiny_dims()
        p = M.init_params(dims, 0, "full")
        q = M.make_ablation("spatial-only", p)
        assert q.backbone.w1 is p.backbone.w1
        assert q.variant == "spatial-only"

    def test_iccf_only_ignores_mean_branch(self):
        # the mean-branch rows of the reduction weights must not affect
        # iccf-only logits
        dims = tiny_dims()
        p = M.init_params(dims, 3, "iccf-only")
        video = t(np.random.default_rng(3).standard_normal((4, 3, 16, 16)))
        a = M.forward(video, p).data.copy()
        d = dims.sketch_dim
        p.actf.reduction.w1.data[d:, :] += 1.0
        b = M.forward(video, p).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_no_attn_uses_unit_temporal_weights(self):
        # scrambling the attention projection must not change no-attn logits
        dims = tiny_dims()
        p = M.init_params(dims, 4, "no-attn")
        video = t(np.random.default_rng(4).standard_normal((4, 3, 16, 16)))
        a = M.forward(video, p).data.copy()
        p.actf.attn.proj.data += 2.0
        b = M.forward(video, p).data
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestDecayFlags:
    def test_biases_and_raw_scalars_exempt(self):
        p = M.init_params(tiny_dims(), 0, "full")
        for name, tensor, decay in M.trainable_parameters(p):
            if "raw" in name or name.endswith((".b", "b1", "b2", "b3")):
                assert not decay, name
            else:
                assert decay, name


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        dims = tiny_dims()
        p = M.init_params(dims, 7, "full")
        path = tmp_path / "model.ckpt"
        M.save_checkpoint(path, p)
        q = M.load_checkpoint(path)
        assert q.variant == p.variant
        assert q.dims == p.dims
        for (na, ta), (nb, tb) in zip(M.named_tensors(p),
                                      M.named_tensors(q)):
            assert na == nb
            np.testing.assert_array_equal(
                ta.data.astype(np.float32), tb.data.astype(np.float32))

    def test_forward_agrees_after_reload(self, tmp_path):
        dims = tiny_dims()
        p = M.init_params(dims, 8, "full")
        path = tmp_path / "model.ckpt"
        M.save_checkpoint(path, p)
        q = M.load_checkpoint(path)
        # checkpoint payload is f32, so compare against the f32-rounded
        # original
        for (_, ta), (_, tb) in zip(M.named_tensors(p), M.named_tensors(q)):
            ta.data = ta.data.astype(np.float32).astype(np.float64)
        video = t(np.random.default_rng(5).standard_normal((4, 3, 16, 16)))
        np.testing.assert_allclose(M.forward(video, p).data,
                                   M.forward(video, q).data, atol=1e-12)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError):
            M.load_checkpoint(path)

    def test_named_tensor_order_stable(self):
        p = M.init_params(tiny_dims(), 0, "full")
        names = [n for n, _ in M.named_tensors(p)]
        assert names[0] == "backbone.w1"
        assert names == sorted(names, key=names.index)
        assert len(names) == len(set(names))
