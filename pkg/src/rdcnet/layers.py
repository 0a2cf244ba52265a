"""Stateful layers holding parameters, buffers and a train/eval flag."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .masking import MaskConfig, masked_dilated_conv
from .ops import ConvSpec
from .rng import Rng
from .tensor import DEFAULT_DTYPE, Tensor, create


class Parameter(Tensor):
    """A learnable leaf tensor.

    ``weight_decay`` marks whether the optimizer applies L2 decay to it
    (conv and linear weights only).
    """

    def __init__(self, data, weight_decay: bool = False, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.weight_decay = weight_decay


class Module:
    """Base class. Parameters, buffers and submodules are discovered from
    instance attributes in assignment order; lists of modules are indexed."""

    training = True
    buffer_names: tuple = ()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _items(self):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for name, value in self._items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in self._items():
            full = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for mname, m in self.named_modules(prefix):
            for b in m.buffer_names:
                yield (f"{mname}.{b}" if mname else b), m, b

    def state(self) -> list:
        """Ordered ``(name, array)`` pairs of every parameter and buffer."""
        out = [(n, p.data) for n, p in self.named_parameters()]
        out += [(n, getattr(m, b)) for n, m, b in self.named_buffers()]
        return out

    def load_state(self, items) -> None:
        """Inverse of :meth:`state`. ``items`` must match names and shapes in order."""
        mine = self.state()
        items = list(items)
        for (name, cur), (oname, arr) in zip(mine, items):
            if name != oname or tuple(cur.shape) != tuple(np.shape(arr)):
                raise ValueError(f"parameter mismatch at {name!r}: checkpoint has {oname!r} "
                                 f"with shape {tuple(np.shape(arr))}, expected {tuple(cur.shape)}")
        if len(items) != len(mine):
            name = mine[len(items)][0] if len(items) < len(mine) else items[len(mine)][0]
            raise ValueError(f"parameter mismatch at {name!r}: checkpoint holds {len(items)} "
                             f"entries, network has {len(mine)}")
        for (name, _), (_, arr) in zip(mine, items):
            self._assign(name, np.asarray(arr))

    def _assign(self, name, arr):
        for pname, p in self.named_parameters():
            if pname == name:
                p.data = arr.astype(p.dtype).reshape(p.shape).copy()
                p.zero_grad()
                return
        for bname, m, b in self.named_buffers():
            if bname == name:
                cur = getattr(m, b)
                setattr(m, b, arr.astype(cur.dtype).reshape(cur.shape).copy())
                return
        raise KeyError(name)

    def train(self, mode: bool = True):
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def to_dtype(self, dtype):
        """Cast parameters and buffers in place (used for 64-bit shadow checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data) if p.requires_grad else None
        for _, m, b in self.named_buffers():
            setattr(m, b, getattr(m, b).astype(dtype))
        return self


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding=None,
                 dilation=1, bias=False, rng: Rng | None = None):
        kernel = ops._pair(kernel)
        if padding is None:
            padding = (dilation * (kernel[0] - 1) // 2, dilation * (kernel[1] - 1) // 2)
        self.spec = ConvSpec(in_channels, out_channels, kernel, stride, padding, dilation)
        fan_in = in_channels * kernel[0] * kernel[1]
        self.weight = Parameter(create((out_channels, in_channels) + kernel, "he_normal", rng,
                                       fan_in=fan_in).data, weight_decay=True)
        self.bias = Parameter(np.zeros(out_channels, DEFAULT_DTYPE)) if bias else None

    def forward(self, x):
        return ops.conv2d_spec(x, self.weight, self.spec, self.bias)


class MaskedDilatedConv2d(Module):
    """3x3 dilated convolution with padding = dilation, preceded by the
    configured random masks. Owns a private random stream."""

    def __init__(self, in_channels, out_channels, dilation, mask: MaskConfig,
                 rng: Rng | None = None, mask_rng: Rng | None = None):
        self.spec = ConvSpec.dilated(in_channels, out_channels, dilation)
        self.mask = mask
        self._mask_rng = mask_rng if mask_rng is not None else Rng(0)
        self.weight = Parameter(create((out_channels, in_channels, 3, 3), "he_normal", rng,
                                       fan_in=in_channels * 9).data, weight_decay=True)

    def forward(self, x):
        return masked_dilated_conv(x, self.weight, self.spec, self.mask, self._mask_rng,
                                   self.training)


class BatchNorm2d(Module):
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.weight = Parameter(np.ones(channels, DEFAULT_DTYPE))
        self.bias = Parameter(np.zeros(channels, DEFAULT_DTYPE))
        self.running_mean = np.zeros(channels, DEFAULT_DTYPE)
        self.running_var = np.ones(channels, DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ops.batchnorm(x, self.weight, self.bias, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_features, out_features, rng: Rng | None = None):
        self.weight = Parameter(create((in_features, out_features), "he_normal", rng,
                                       fan_in=in_features).data, weight_decay=True)
        self.bias = Parameter(np.zeros(out_features, DEFAULT_DTYPE))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)
