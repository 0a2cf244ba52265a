import numpy as np
import pytest

from oracles import bilinear_point, conv_naive, conv_naive_asym
from rdcnet.blocks import CE, FGFE, MRDC, MRDCBlock, PlainMain, channel_split
from rdcnet.errors import ConfigError, ShapeError
from rdcnet.gradcheck import gradcheck
from rdcnet.masking import MaskConfig
from rdcnet.rng import Rng
from rdcnet.tensor import Tensor, concat

EPS = 1e-5
NULL = MaskConfig("null_mask")


def t32(a):
    return Tensor(np.asarray(a, np.float32))


def bn_ref(x, bn, training):
    """Batch norm from the module's current parameters, in float64."""
    g, b = bn.weight.data.astype(np.float64), bn.bias.data.astype(np.float64)
    if training:
        mean, var = x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))
    else:
        mean, var = bn.running_mean.astype(np.float64), bn.running_var.astype(np.float64)
    return (g[:, None, None] * (x - mean[:, None, None]) / np.sqrt(var[:, None, None] + EPS)
            + b[:, None, None])


def randomize_bn(module, rng):
    for name, m in module.named_modules():
        if hasattr(m, "running_mean"):
            c = m.running_mean.size
            m.weight.data[:] = rng.uniform(0.5, 1.5, c)
            m.bias.data[:] = rng.normal(size=c)
            m.running_mean[:] = rng.normal(size=c)
            m.running_var[:] = rng.uniform(0.5, 2.0, c)


def fgfe_ref(x, fgfe, training):
    pooled = x.mean(axis=(2, 3))[:, :, None, None]
    local = np.maximum(bn_ref(conv_naive(pooled, fgfe.conv.weight.data), fgfe.bn, training), 0)
    h, w = x.shape[2:]
    return np.stack([np.stack([bilinear_point(local[n, c], h, w) for c in range(x.shape[1])])
                     for n in range(x.shape[0])])


class TestChannelSplit:
    def test_four_channels(self):
        x = t32(np.arange(4).reshape(1, 4, 1, 1))
        assert [p.data.ravel().tolist() for p in channel_split(x)] == [[0], [1], [2], [3]]

    def test_round_trip(self):
        x = t32(Rng(1).normal(size=(2, 12, 3, 3)))
        assert np.array_equal(concat(channel_split(x), axis=1).data, x.data)

    def test_index_ranges(self):
        x = t32(Rng(2).normal(size=(1, 64, 2, 2)))
        for i, part in enumerate(channel_split(x)):
            assert np.array_equal(part.data, x.data[:, 16 * i:16 * (i + 1)])

    def test_not_divisible(self):
        with pytest.raises(ConfigError):
            channel_split(t32(np.zeros((1, 6, 2, 2))))
        with pytest.raises(ConfigError):
            MRDC(6, NULL, Rng(0), Rng(1))


class TestFGFE:
    def test_constant_identity_path(self):
        f = FGFE(3, Rng(0))
        f.conv.weight.data[:] = np.eye(3, dtype=np.float32)[:, :, None, None]
        f.bn.running_var[:] = 1 - EPS
        f.eval()
        c = np.array([0.7, -1.2, 2.5], np.float32)
        out = f(t32(np.broadcast_to(c[None, :, None, None], (2, 3, 5, 6)))).data
        assert np.allclose(out, np.maximum(c, 0)[None, :, None, None], atol=1e-6)

    @pytest.mark.parametrize("training", [True, False])
    def test_zero_spatial_variance(self, training):
        f = FGFE(4, Rng(1)).train(training)
        out = f(t32(Rng(3).normal(size=(3, 4, 7, 5)))).data
        assert np.all(out == out[:, :, :1, :1])

    @pytest.mark.parametrize("training", [True, False])
    def test_composition_oracle(self, training):
        rng = Rng(4)
        f = FGFE(4, rng.child(0))
        randomize_bn(f, rng)
        f.train(training)
        x = rng.normal(size=(3, 4, 6, 5)).astype(np.float32)
        out = f(t32(x)).data
        assert np.abs(out - fgfe_ref(x.astype(np.float64), f, training)).max() <= 1e-6


def mrdc_ref(x, m, training):
    q = x.shape[1] // 4
    f1, f2, f3, f4 = (x[:, i * q:(i + 1) * q] for i in range(4))
    w = lambda conv: conv.weight.data.astype(np.float64)  # noqa: E731
    b1 = conv_naive(f1, w(m.branch1), padding=1)
    b2 = conv_naive(conv_naive(f2, w(m.branch2_dilated), padding=2, dilation=2),
                    w(m.branch2_refine), padding=1)
    b3 = conv_naive(f3, w(m.branch3_dilated), padding=3, dilation=3)
    b3 = conv_naive_asym(conv_naive_asym(b3, w(m.branch3_1x5), 0, 2), w(m.branch3_5x1), 2, 0)
    b4 = fgfe_ref(f4, m.branch4, training)
    fused = bn_ref(conv_naive(np.concatenate([b1, b2, b3, b4], axis=1), w(m.fuse)), m.fuse_bn,
                   training)
    return float(m.alpha.data[0]) * fused + x


class TestMRDC:
    def test_alpha_zero_identity(self):
        m = MRDC(8, MaskConfig("c_k_mask", 0.5), Rng(1), Rng(2), alpha=0.0)
        for seed in range(10):
            x = t32(Rng(seed).normal(size=(2, 8, 6, 6)))
            assert np.array_equal(m(x).data, x.data)

    def test_zero_weights_eval_identity(self):
        m = MRDC(8, NULL, Rng(1), Rng(2), alpha=0.7)
        for p in m.parameters():
            if p is not m.alpha:
                p.data[:] = 0
        m.fuse_bn.weight.data[:] = 1
        m.fuse_bn.running_var[:] = 1 - EPS
        m.eval()
        x = t32(Rng(3).normal(size=(2, 8, 5, 5)))
        assert np.allclose(m(x).data, x.data, atol=1e-7)

    @pytest.mark.parametrize("training", [True, False])
    def test_four_branch_oracle(self, training):
        rng = Rng(5)
        m = MRDC(8, NULL, rng.child(0), rng.child(1), alpha=0.8)
        randomize_bn(m, rng)
        m.train(training)
        x = rng.normal(size=(3, 8, 7, 7)).astype(np.float32)
        out = m(t32(x)).data
        assert np.abs(out - mrdc_ref(x.astype(np.float64), m, training)).max() <= 1e-5

    @pytest.mark.parametrize("hw", [(5, 5), (4, 9), (11, 3)])
    def test_shape_preserved(self, hw):
        m = MRDC(12, MaskConfig(), Rng(1), Rng(2))
        x = t32(np.ones((2, 12) + hw))
        assert m(x).shape == x.shape
        assert all(o.shape == (2, 3) + hw for o in m.branches(x))

    def test_alpha_modes(self):
        assert MRDC(4, NULL, Rng(0), Rng(0)).alpha.requires_grad
        frozen = MRDC(4, NULL, Rng(0), Rng(0), alpha=0.3, alpha_learnable=False)
        assert not frozen.alpha.requires_grad
        assert frozen.alpha.data[0] == np.float32(0.3)

    def test_gradient(self):
        m = MRDC(8, NULL, Rng(6), Rng(7)).to_dtype(np.float64)
        r = gradcheck(lambda x: m(x), [Rng(8).normal(size=(2, 8, 6, 6))], m.parameters())
        assert r.passed, r


class TestCE:
    def test_uniform_attention_on_constant_input(self):
        ce = CE(16, 4, Rng(1))
        c = Rng(2).normal(size=16)
        x = t32(np.broadcast_to(c[None, :, None, None], (2, 16, 3, 5)))
        parts = ce.parts(x)
        assert np.abs(parts["attention"].data - 1 / 15).max() < 1e-6
        assert np.abs(parts["context"].data[:, :, 0, 0] - c.astype(np.float32)).max() < 1e-6

    def test_zero_bottleneck_halves(self):
        ce = CE(8, 2, Rng(1))
        ce.up.weight.data[:] = 0
        ce.up.bias.data[:] = 0
        x = t32(Rng(3).normal(size=(2, 8, 4, 4)))
        assert np.array_equal(ce.parts(x)["gate"].data, np.full((2, 8, 1, 1), 0.5, np.float32))
        assert np.array_equal(ce(x).data, 0.5 * x.data)

    def test_weighted_sum_oracle(self):
        ce = CE(16, 4, Rng(4))
        x = Rng(5).normal(size=(3, 16, 5, 4)).astype(np.float32)
        parts = ce.parts(t32(x))
        key = conv_naive(x, ce.key.weight.data)[:, 0].reshape(3, -1)
        attn = np.exp(key - key.max(axis=1, keepdims=True))
        attn /= attn.sum(axis=1, keepdims=True)
        assert np.abs(parts["attention"].data.reshape(3, -1) - attn).max() < 1e-6
        ctx = np.einsum("nchw,nhw->nc", x.astype(np.float64), attn.reshape(3, 5, 4))
        assert np.abs(parts["context"].data[:, :, 0, 0] - ctx).max() < 1e-6

    def test_invariants(self):
        ce = CE(32, 16, Rng(6))
        x = t32(Rng(7).normal(scale=3.0, size=(4, 32, 6, 6)))
        parts = ce.parts(x)
        sums = parts["attention"].data.reshape(4, -1).sum(axis=1)
        assert np.abs(sums - 1).max() <= 1e-6
        gate = parts["gate"].data
        assert np.all((gate > 0) & (gate < 1))
        assert np.all(np.abs(parts["out"].data) <= np.abs(x.data))
        assert parts["key"].shape == (4, 1, 6, 6)

    @pytest.mark.parametrize("c,r", [(8, 16), (12, 8)])
    def test_bad_reduction(self, c, r):
        with pytest.raises(ConfigError):
            CE(c, r, Rng(0))

    def test_gradient(self):
        ce = CE(16, 4, Rng(8)).to_dtype(np.float64)
        r = gradcheck(lambda x: ce(x), [Rng(9).normal(size=(2, 16, 4, 4))], ce.parameters())
        assert r.passed, r


class TestBlock:
    def test_near_identity_composition(self):
        b = MRDCBlock(4, 4, False, NULL, Rng(1), Rng(2), alpha=0.0)
        b.conv.weight.data[:] = 0
        b.conv.weight.data[range(4), range(4), 1, 1] = 1
        b.bn.running_var[:] = 1 - EPS
        b.eval()
        x = Rng(3).normal(size=(2, 4, 5, 5)).astype(np.float32)
        assert np.allclose(b(t32(x)).data, np.maximum(x, 0) + x, atol=1e-6)
        assert b.skip_conv is None

    def test_downsampling_shape(self):
        b = MRDCBlock(64, 128, True, MaskConfig(), Rng(1), Rng(2))
        assert b(t32(np.zeros((2, 64, 32, 32)))).shape == (2, 128, 16, 16)

    def test_odd_extent(self):
        b = MRDCBlock(8, 16, True, MaskConfig(), Rng(1), Rng(2))
        assert b(t32(np.ones((2, 8, 7, 7)))).shape == (2, 16, 4, 4)

    def test_plain_main(self):
        b = MRDCBlock(8, 8, False, NULL, Rng(1), Rng(2), block="plain")
        assert isinstance(b.main, PlainMain)
        with pytest.raises(ConfigError):
            MRDCBlock(8, 8, False, NULL, Rng(1), Rng(2), block="bottleneck")

    def test_residual_mismatch_is_shape_error(self):
        b = MRDCBlock(8, 8, False, NULL, Rng(1), Rng(2))
        b.downsample = True
        b.conv.spec = type(b.conv.spec)(8, 8, 3, 2, 1)
        with pytest.raises(ShapeError):
            b(t32(np.ones((2, 8, 6, 6))))

    @pytest.mark.parametrize("down", [False, True])
    def test_gradient(self, down):
        b = MRDCBlock(8, 16 if down else 8, down, NULL, Rng(4), Rng(5)).to_dtype(np.float64)
        r = gradcheck(lambda x: b(x), [Rng(6).normal(size=(2, 8, 6, 6))], b.parameters())
        assert r.passed, r
