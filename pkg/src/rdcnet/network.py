"""Architecture configuration and the five-stage RDCNet classifier."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import ops
from .blocks import CE, MRDCBlock
from .errors import ConfigError
from .layers import BatchNorm2d, Conv2d, Linear, Module
from .masking import MaskConfig
from .rng import Rng
from .tensor import no_grad, relu

STEMS = ("small_input", "large_input")
BLOCK_TYPES = ("mrdc", "plain")

# CE placement presets: stage sets a CE module follows. E is the default;
# any other tuple of stages 1..4 is accepted as well.
CE_PLACEMENTS = {
    "A": (),
    "B": (1,),
    "C": (2,),
    "D": (3,),
    "E": (4,),
    "F": (3, 4),
    "G": (2, 3, 4),
    "H": (1, 2, 3, 4),
}

ABLATIONS = ("rdcnet", "net1", "net2", "net3", "net4")


@dataclass(frozen=True)
class ArchConfig:
    stem: str = "small_input"
    blocks: tuple = (3, 4, 6, 3)
    widths: tuple = (64, 128, 256, 512)
    block: str = "mrdc"
    mask: MaskConfig = field(default_factory=MaskConfig)
    alpha: float = 0.5
    alpha_learnable: bool = True
    ce: tuple = (4,)
    reduction: int = 16
    classes: int = 10
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "ce", tuple(sorted({int(c) for c in self.ce})))
        self.validate()

    def validate(self):
        if self.stem not in STEMS:
            raise ConfigError(f"unknown stem {self.stem!r}; expected one of {', '.join(STEMS)}",
                              field="arch.stem")
        if self.block not in BLOCK_TYPES:
            raise ConfigError(f"unknown block type {self.block!r}; expected one of "
                              f"{', '.join(BLOCK_TYPES)}", field="arch.block")
        if len(self.blocks) != 4 or any(b < 1 for b in self.blocks):
            raise ConfigError("need four positive block counts", field="arch.blocks")
        if len(self.widths) != 4 or any(w < 4 or w % 4 for w in self.widths):
            raise ConfigError("need four widths, each a positive multiple of 4", field="arch.widths")
        bad = [c for c in self.ce if c not in (1, 2, 3, 4)]
        if bad:
            raise ConfigError(f"invalid CE placement {bad[0]}; stages are 1..4", field="arch.ce")
        if self.reduction < 1:
            raise ConfigError("reduction ratio must be >= 1", field="arch.reduction")
        for c in self.ce:
            w = self.widths[c - 1]
            if w < self.reduction or w % self.reduction:
                raise ConfigError(f"stage {c} width {w} is not a multiple of reduction "
                                  f"{self.reduction}", field="arch.reduction")
        if self.classes < 1:
            raise ConfigError("class count must be >= 1", field="arch.classes")


def ablation(cfg: ArchConfig, name: str) -> ArchConfig:
    """Ablation variant of ``cfg``: ``net1`` drops CE, ``net2`` swaps MRDC
    for a plain 3x3 conv, ``net3`` does both, ``net4`` uses the 7x7 stem."""
    name = name.lower()
    if name == "rdcnet":
        return cfg
    if name == "net1":
        return replace(cfg, ce=())
    if name == "net2":
        return replace(cfg, block="plain")
    if name == "net3":
        return replace(cfg, ce=(), block="plain")
    if name == "net4":
        return replace(cfg, stem="large_input")
    raise ConfigError(f"unknown variant {name!r}; expected one of {', '.join(ABLATIONS)}")


class RDCNet(Module):
    """Stem, four stages of MRDC residual blocks, optional CE modules after
    configured stages, global average pooling and a linear head."""

    def __init__(self, cfg: ArchConfig, rng: Rng):
        self.cfg = cfg
        init_rng = rng.child(0)
        mask_rng = rng.child(1)
        w0 = cfg.widths[0]
        if cfg.stem == "small_input":
            self.stem_conv = Conv2d(cfg.in_channels, w0, 3, stride=1, padding=1, rng=init_rng)
        else:
            self.stem_conv = Conv2d(cfg.in_channels, w0, 7, stride=2, padding=3, rng=init_rng)
        self.stem_bn = BatchNorm2d(w0)
        in_c = w0
        for stage, (count, width) in enumerate(zip(cfg.blocks, cfg.widths), 1):
            blocks = []
            for i in range(count):
                down = stage > 1 and i == 0
                blocks.append(MRDCBlock(in_c, width, down, cfg.mask, init_rng, mask_rng,
                                        cfg.alpha, cfg.alpha_learnable, cfg.block))
                in_c = width
            setattr(self, f"layer{stage}", blocks)
            if stage in cfg.ce:
                setattr(self, f"ce{stage}", CE(width, cfg.reduction, init_rng))
        self.fc = Linear(in_c, cfg.classes, init_rng)

    def stem(self, x):
        x = relu(self.stem_bn(self.stem_conv(x)))
        if self.cfg.stem == "large_input":
            x = ops.max_pool2d(x, 3, 2, 1)
        return x

    def stages(self, x):
        """Yield ``(name, tensor)`` after the stem, each stage and each CE."""
        x = self.stem(x)
        yield "stem", x
        for stage in range(1, 5):
            for block in getattr(self, f"layer{stage}"):
                x = block(x)
            yield f"layer{stage}", x
            ce = getattr(self, f"ce{stage}", None)
            if ce is not None:
                x = ce(x)
                yield f"ce{stage}", x

    def forward(self, x):
        for _, x in self.stages(x):
            pass
        pooled = ops.global_avg_pool(x)
        return self.fc(pooled.reshape(pooled.shape[0], pooled.shape[1]))

    def trace(self, x) -> list:
        """Layer-by-layer ``(name, shape)`` trace for input ``x``, run in
        eval mode without recording and without touching any state."""
        was_training = self.training
        self.eval()
        out = []
        try:
            with no_grad():
                for name, x in self.stages(x):
                    out.append((name, x.shape))
                pooled = ops.global_avg_pool(x)
                out.append(("gap", pooled.shape))
                logits = self.fc(pooled.reshape(pooled.shape[0], pooled.shape[1]))
                out.append(("fc", logits.shape))
        finally:
            self.train(was_training)
        return out

    def alphas(self) -> dict:
        return {name[:-len(".alpha")]: float(p.data[0])
                for name, p in self.named_parameters() if name.endswith("alpha")}


def build_network(cfg: ArchConfig, rng: Rng) -> RDCNet:
    return RDCNet(cfg, rng)
