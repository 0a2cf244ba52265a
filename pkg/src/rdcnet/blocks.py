"""RDCNet building blocks: FGFE, MRDC, CE and the MRDC residual block."""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import BatchNorm2d, Conv2d, MaskedDilatedConv2d, Module, Parameter
from .masking import MaskConfig
from .rng import Rng
from .tensor import Tensor, concat, matmul, mul, relu, sigmoid, softmax_flat, split


def channel_split(x: Tensor, groups: int = 4) -> list:
    """Contiguous channel groups of ``x [N, c, h, w]`` in order."""
    if x.shape[1] % groups:
        raise ConfigError(f"channel count {x.shape[1]} is not divisible by {groups}")
    return split(x, groups, axis=1)


class FGFE(Module):
    """Fine-grained feature enhancement branch.

    Global average pooling, a 1x1 convolution with batch norm and ReLU,
    then bilinear upsampling back to the input's spatial size. Because the
    pooled map is 1x1 the output is constant over space for each
    (sample, channel).
    """

    def __init__(self, channels: int, rng: Rng):
        self.conv = Conv2d(channels, channels, 1, rng=rng)
        self.bn = BatchNorm2d(channels)

    def forward(self, x):
        h, w = x.shape[2:]
        pooled = ops.global_avg_pool(x)
        local = relu(self.bn(self.conv(pooled)))
        return ops.bilinear_upsample(local, h, w)


class MRDC(Module):
    """Multi-branch random dilated convolution over channel quarters.

    ``out = alpha * BN(Conv1x1(concat(b1, b2, b3, b4))) + x`` with

    * b1: 3x3 conv
    * b2: masked dilated 3x3 (d=2) then 3x3 conv
    * b3: masked dilated 3x3 (d=3) then 1x5 and 5x1 convs
    * b4: :class:`FGFE`

    ``alpha`` is a one-element parameter; with ``alpha_learnable=False`` it
    is held fixed (swept-constant mode).
    """

    def __init__(self, channels: int, mask: MaskConfig, rng: Rng, mask_rng: Rng,
                 alpha: float = 0.5, alpha_learnable: bool = True):
        if channels % 4:
            raise ConfigError(f"MRDC width {channels} is not divisible by 4", field="arch.widths")
        q = channels // 4
        self.branch1 = Conv2d(q, q, 3, rng=rng)
        self.branch2_dilated = MaskedDilatedConv2d(q, q, 2, mask, rng, mask_rng.spawn())
        self.branch2_refine = Conv2d(q, q, 3, rng=rng)
        self.branch3_dilated = MaskedDilatedConv2d(q, q, 3, mask, rng, mask_rng.spawn())
        self.branch3_1x5 = Conv2d(q, q, (1, 5), padding=(0, 2), rng=rng)
        self.branch3_5x1 = Conv2d(q, q, (5, 1), padding=(2, 0), rng=rng)
        self.branch4 = FGFE(q, rng)
        self.fuse = Conv2d(channels, channels, 1, rng=rng)
        self.fuse_bn = BatchNorm2d(channels)
        self.alpha = Parameter(np.full(1, alpha, np.float32))
        if not alpha_learnable:
            self.alpha.requires_grad = False
            self.alpha.grad = None

    def branches(self, x) -> list:
        f1, f2, f3, f4 = channel_split(x)
        out = [
            self.branch1(f1),
            self.branch2_refine(self.branch2_dilated(f2)),
            self.branch3_5x1(self.branch3_1x5(self.branch3_dilated(f3))),
            self.branch4(f4),
        ]
        for i, (o, f) in enumerate(zip(out, (f1, f2, f3, f4)), 1):
            if o.shape != f.shape:
                raise ShapeError(f"MRDC branch {i} changed shape {f.shape} -> {o.shape}")
        return out

    def forward(self, x):
        fused = self.fuse_bn(self.fuse(concat(self.branches(x), axis=1)))
        return mul(self.alpha, fused) + x


class CE(Module):
    """Context excitation.

    A 1x1 key conv to a single channel, softmax over all spatial
    positions, attention-weighted channel aggregation, and a sigmoid-gated
    bottleneck (``C -> C/r -> C``) that rescales the input channels.
    """

    def __init__(self, channels: int, reduction: int, rng: Rng):
        if channels < reduction or channels % reduction:
            raise ConfigError(f"CE width {channels} must be a multiple of the reduction "
                              f"ratio {reduction}", field="arch.reduction")
        self.key = Conv2d(channels, 1, 1, rng=rng)
        self.down = Conv2d(channels, channels // reduction, 1, bias=True, rng=rng)
        self.up = Conv2d(channels // reduction, channels, 1, bias=True, rng=rng)
        self.reduction = reduction

    def parts(self, x) -> dict:
        """Intermediate maps: key, attention, context, gate, and output."""
        n, c, h, w = x.shape
        key = self.key(x)
        attn = softmax_flat(key)
        context = matmul(x.reshape(n, c, h * w), attn.reshape(n, h * w, 1)).reshape(n, c, 1, 1)
        gate = sigmoid(self.up(relu(self.down(context))))
        return {"key": key, "attention": attn, "context": context, "gate": gate,
                "out": mul(gate, x)}

    def forward(self, x):
        return self.parts(x)["out"]


class PlainMain(Module):
    """3x3 conv + BN: the BasicBlock second convolution, used when MRDC is
    ablated away."""

    def __init__(self, channels: int, rng: Rng):
        self.conv = Conv2d(channels, channels, 3, rng=rng)
        self.bn = BatchNorm2d(channels)

    def forward(self, x):
        return self.bn(self.conv(x))


class MRDCBlock(Module):
    """Residual block ``M(f(x)) + g(x)``.

    ``f`` is 3x3 conv (stride 2 when downsampling) + BN + ReLU, ``M`` the
    MRDC module (or :class:`PlainMain`), ``g`` the identity or, when the
    shape changes, 2x2 average pooling + 1x1 conv + BN.
    """

    def __init__(self, in_channels: int, out_channels: int, downsample: bool, mask: MaskConfig,
                 rng: Rng, mask_rng: Rng, alpha: float = 0.5, alpha_learnable: bool = True,
                 block: str = "mrdc"):
        stride = 2 if downsample else 1
        self.downsample = downsample
        self.conv = Conv2d(in_channels, out_channels, 3, stride=stride, rng=rng)
        self.bn = BatchNorm2d(out_channels)
        if block == "mrdc":
            self.main = MRDC(out_channels, mask, rng, mask_rng, alpha, alpha_learnable)
        elif block == "plain":
            self.main = PlainMain(out_channels, rng)
        else:
            raise ConfigError(f"unknown block type {block!r}", field="arch.block")
        if downsample or in_channels != out_channels:
            self.skip_conv = Conv2d(in_channels, out_channels, 1, rng=rng)
            self.skip_bn = BatchNorm2d(out_channels)
        else:
            self.skip_conv = self.skip_bn = None

    def shortcut(self, x):
        if self.skip_conv is None:
            return x
        if self.downsample:
            x = ops.avg_pool2d(x, 2, 2, ceil_mode=True)
        return self.skip_bn(self.skip_conv(x))

    def forward(self, x):
        main = self.main(relu(self.bn(self.conv(x))))
        skip = self.shortcut(x)
        if main.shape != skip.shape:
            raise ShapeError(f"residual shapes differ: main {main.shape}, skip {skip.shape}")
        return main + skip
