"""Stochastic channel and kernel masking in front of dilated convolutions.

A mask entry is 1 when its uniform draw ``r`` satisfies ``r < tau`` and 0
otherwise. The channel mask has shape ``C x 1 x 1``, the kernel mask
``C x H x W``; both are shared across the batch axis, are redrawn on every
training-mode call, and are exact identities in eval mode. No 1/tau
rescaling is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .ops import ConvSpec, conv2d_spec
from .rng import Rng
from .tensor import Tensor, mul

STRATEGIES = ("null_mask", "k_mask", "c_mask", "c_k_mask")


@dataclass(frozen=True)
class MaskConfig:
    strategy: str = "c_k_mask"
    tau: float = 0.9

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of "
                              f"{', '.join(STRATEGIES)}", field="mask.strategy")
        _check_tau(self.tau)

    @property
    def uses_channel_mask(self) -> bool:
        return self.strategy in ("c_mask", "c_k_mask")

    @property
    def uses_kernel_mask(self) -> bool:
        return self.strategy in ("k_mask", "c_k_mask")


def _check_tau(tau):
    if not (0.0 <= tau <= 1.0):
        raise ConfigError(f"retention threshold must lie in [0, 1], got {tau}", field="mask.tau")


def sample_mask(shape, tau: float, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Binary mask with entries ``1[r < tau]``, ``r ~ U[0, 1)``."""
    _check_tau(tau)
    return (rng.random(shape) < tau).astype(dtype)


def channel_mask(x: Tensor, tau: float, rng: Rng, training: bool = True) -> Tensor:
    """Zero whole channels of ``x [N,C,H,W]`` with probability ``1 - tau``."""
    _check_tau(tau)
    if not training:
        return x
    m = sample_mask((x.shape[1], 1, 1), tau, rng, x.dtype)
    return mul(x, Tensor(m[None], dtype=x.dtype))


def kernel_mask(x: Tensor, tau: float, rng: Rng, training: bool = True) -> Tensor:
    """Zero individual ``(c, h, w)`` entries of ``x`` with probability ``1 - tau``."""
    _check_tau(tau)
    if not training:
        return x
    m = sample_mask(x.shape[1:], tau, rng, x.dtype)
    return mul(x, Tensor(m[None], dtype=x.dtype))


def apply_masks(x: Tensor, cfg: MaskConfig, rng: Rng, training: bool = True) -> Tensor:
    """Channel mask, then kernel mask, as selected by ``cfg.strategy``."""
    if cfg.uses_channel_mask:
        x = channel_mask(x, cfg.tau, rng, training)
    if cfg.uses_kernel_mask:
        x = kernel_mask(x, cfg.tau, rng, training)
    return x


def masked_dilated_conv(x: Tensor, weight: Tensor, spec: ConvSpec, cfg: MaskConfig,
                        rng: Rng, training: bool = True) -> Tensor:
    """Mask the input per ``cfg`` then apply the resolution-preserving
    dilated convolution described by ``spec``."""
    if not spec.resolution_preserving:
        raise ConfigError(f"masked dilated conv needs k=3, s=1 and p=d, got {spec}")
    return conv2d_spec(apply_masks(x, cfg, rng, training), weight, spec)
