"""Differentiable neural-network primitives on NCHW tensors.

Convolution is cross-correlation with zero padding. The default path is
im2col (a strided window view gathered into a matrix and multiplied with
the flattened kernel); :func:`conv2d_direct` accumulates one shifted
product per kernel tap and serves as an independent forward check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, as_tensor, matmul, record


def _pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def conv_out_extent(n_in: int, k: int, s: int = 1, p: int = 0, d: int = 1) -> int:
    """Output extent ``floor((n_in + 2p - d(k-1) - 1) / s) + 1``."""
    return (n_in + 2 * p - d * (k - 1) - 1) // s + 1


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution: kernel, stride, padding and dilation."""

    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: tuple = (1, 1)
    dilation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "padding", _pair(self.padding))
        if self.stride < 1 or self.dilation < 1:
            raise ConfigError("stride and dilation must be >= 1")
        if min(self.padding) < 0 or min(self.kernel) < 1:
            raise ConfigError("padding must be >= 0 and kernel >= 1")

    @classmethod
    def dilated(cls, in_channels, out_channels, dilation):
        """3x3, stride 1, padding equal to the dilation: preserves H and W."""
        return cls(in_channels, out_channels, (3, 3), 1, (dilation, dilation), dilation)

    @property
    def resolution_preserving(self) -> bool:
        return (self.kernel == (3, 3) and self.stride == 1
                and self.padding == (self.dilation, self.dilation))

    def output_hw(self, h, w):
        return (conv_out_extent(h, self.kernel[0], self.stride, self.padding[0], self.dilation),
                conv_out_extent(w, self.kernel[1], self.stride, self.padding[1], self.dilation))


def _conv_geometry(x_shape, w_shape, stride, padding, dilation):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x_shape} and {w_shape}")
    n, c, h, w = x_shape
    co, ci, kh, kw = w_shape
    if ci != c:
        raise ShapeError(f"input has {c} channels but weight expects {ci}")
    ph, pw = padding
    ho = conv_out_extent(h, kh, stride, ph, dilation)
    wo = conv_out_extent(w, kw, stride, pw, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"non-positive conv output {ho}x{wo} for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}, dilation {dilation}")
    return n, c, h, w, co, kh, kw, ho, wo


def _pad(x, ph, pw, value=0.0):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


def _windows(xp, kh, kw, ho, wo, stride, dilation):
    """Read-only view ``[N, C, kh, kw, Ho, Wo]`` of every kernel tap."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(xp, (n, c, kh, kw, ho, wo),
                      (sn, sc, dilation * sh, dilation * sw, stride * sh, stride * sw),
                      writeable=False)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding=0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation of ``x [N,C,H,W]`` with ``weight [Co,C,kh,kw]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    padding = _pair(padding)
    n, c, h, w, co, kh, kw, ho, wo = _conv_geometry(x.shape, weight.shape, stride, padding, dilation)
    ph, pw = padding
    xp = _pad(x.data, ph, pw)
    # channel-major column matrix [C*kh*kw, N*Ho*Wo]
    cols = _windows(xp, kh, kw, ho, wo, stride, dilation)
    cols = cols.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(co, c * kh * kw)
    # forward sums accumulate in float64, so a float32 result is within a
    # rounding or two of the exact value however long the reduction is
    acc = np.promote_types(x.dtype, np.float64)
    out = wmat.astype(acc) @ cols.astype(acc)
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3), x.dtype)
    xpshape, dtype = xp.shape, x.dtype

    def bw(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(co, n * ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gt @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gt.sum(axis=1)
        if x.requires_grad:
            gcols = (wmat.T @ gt).reshape(c, kh, kw, n, ho, wo)
            # accumulate in [C, N, Hp, Wp] so each tap adds a contiguous block
            gxp = np.zeros((c, n) + xpshape[2:], dtype=dtype)
            hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i * dilation:i * dilation + hi:stride,
                        j * dilation:j * dilation + wi:stride] += gcols[:, i, j]
            gx = gxp[:, :, ph:ph + h, pw:pw + w].transpose(1, 0, 2, 3)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, parents, bw)


def conv2d_direct(x, weight, bias=None, stride=1, padding=0, dilation=1) -> np.ndarray:
    """Forward-only direct convolution: one shifted product per kernel tap."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    wd = weight.data if isinstance(weight, Tensor) else np.asarray(weight)
    padding = _pair(padding)
    n, c, h, w, co, kh, kw, ho, wo = _conv_geometry(xd.shape, wd.shape, stride, padding, dilation)
    xp = _pad(xd, *padding)
    out = np.zeros((n, co, ho, wo), dtype=xd.dtype)
    hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i * dilation:i * dilation + hi:stride, j * dilation:j * dilation + wi:stride]
            out += np.einsum("nchw,oc->nohw", patch, wd[:, :, i, j])
    if bias is not None:
        bd = bias.data if isinstance(bias, Tensor) else np.asarray(bias)
        out += bd[None, :, None, None]
    return out


def conv2d_spec(x: Tensor, weight: Tensor, spec: ConvSpec, bias=None) -> Tensor:
    if weight.shape != (spec.out_channels, spec.in_channels) + spec.kernel:
        raise ShapeError(f"weight shape {weight.shape} does not match {spec}")
    return conv2d(x, weight, bias, spec.stride, spec.padding, spec.dilation)


def conv2d_asym(x: Tensor, weight_1x5: Tensor, weight_5x1: Tensor) -> Tensor:
    """1x5 convolution (padding 0,2) followed by 5x1 (padding 2,0)."""
    if weight_1x5.shape[2:] != (1, 5) or weight_5x1.shape[2:] != (5, 1):
        raise ShapeError("conv2d_asym expects 1x5 and 5x1 kernels")
    return conv2d(conv2d(x, weight_1x5, padding=(0, 2)), weight_5x1, padding=(2, 0))


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization of ``[N, C, ...]`` input.

    Training mode normalizes with the biased batch variance and updates the
    running statistics in place (running variance uses the unbiased
    estimate); eval mode uses the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    g_ = gamma.data.reshape(bshape)
    m = x.size // c

    if training:
        if m < 2:
            raise ContractError(
                f"batch norm in training mode needs >= 2 values per channel, got {m}")
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(c) * (m / (m - 1))
    else:
        inv = (1.0 / np.sqrt(running_var.astype(x.dtype) + eps)).reshape(bshape)
        xhat = (x.data - running_mean.astype(x.dtype).reshape(bshape)) * inv
    out = g_ * xhat + beta.data.reshape(bshape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * g_
            if training:
                gx = inv / m * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
            else:
                gx = dxhat * inv
        return gx, ggamma, gbeta

    return record(out.astype(x.dtype, copy=False), (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# pooling


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over H and W, keeping ``[N, C, 1, 1]``."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    return x.mean(axis=(2, 3), keepdims=True)


def avg_pool2d(x: Tensor, window: int, stride: int | None = None,
               ceil_mode: bool = False) -> Tensor:
    """Average pooling without padding.

    With ``ceil_mode`` a trailing partial window is kept and averages only
    the entries it covers, so odd extents map to ``ceil(n / stride)``.
    """
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    ho, wo = conv_out_extent(h, window, stride), conv_out_extent(w, window, stride)
    if ceil_mode:
        ho, wo = -(-(h - window) // stride) + 1, -(-(w - window) // stride) + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool2d window {window} too large for {h}x{w}")
    eh, ew = max(0, (ho - 1) * stride + window - h), max(0, (wo - 1) * stride + window - w)
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, eh), (0, ew))) if eh or ew else x.data
    ones = np.pad(np.ones((h, w), x.dtype), ((0, eh), (0, ew)))
    count = _windows(ones[None, None], window, window, ho, wo, stride, 1).sum(axis=(2, 3))[0, 0]
    out = _windows(xp, window, window, ho, wo, stride, 1).sum(axis=(2, 3)) / count
    shape, dtype = x.shape, x.dtype

    def bw(g):
        gx = np.zeros((n, c, h + eh, w + ew), dtype=dtype)
        gs = g / count
        hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for i in range(window):
            for j in range(window):
                gx[:, :, i:i + hi:stride, j:j + wi:stride] += gs
        return (gx[:, :, :h, :w],)

    return record(out.astype(dtype, copy=False), (x,), bw)


def max_pool2d(x: Tensor, window: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max pooling; padded positions never win (padding value is -inf)."""
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    ho = conv_out_extent(h, window, stride, padding)
    wo = conv_out_extent(w, window, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d window {window} too large for {h}x{w}")
    xp = _pad(x.data, padding, padding, -np.inf)
    win = _windows(xp, window, window, ho, wo, stride, 1)
    flat = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, ho, wo, window * window)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    xpshape, dtype = xp.shape, x.dtype

    def bw(g):
        gxp = np.zeros(xpshape, dtype=dtype)
        hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
        for t in range(window * window):
            i, j = divmod(t, window)
            gxp[:, :, i:i + hi:stride, j:j + wi:stride] += g * (idx == t)
        return (gxp[:, :, padding:padding + h, padding:padding + w],)

    return record(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# bilinear upsampling (align_corners=False, edge clamped)


def _interp_coords(n_in, n_out):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    return i0, i1, lam


def _interp_matrix(n_in, n_out, i0, i1, lam):
    a = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - lam)
    np.add.at(a, (rows, i1), lam)
    return a


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize ``[N,C,h,w]`` to ``[N,C,out_h,out_w]`` by bilinear interpolation.

    Source coordinate for output index ``i`` is ``(i + 0.5) * in / out - 0.5``,
    clamped at the borders. Interpolation runs along W then along H, each
    stage in the form ``v0 + t * (v1 - v0)`` so constants and identity
    resizes are reproduced exactly.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    hi0, hi1, hl = _interp_coords(h, out_h)
    wi0, wi1, wl = _interp_coords(w, out_w)
    dtype = x.dtype
    wl_, hl_ = wl.astype(dtype), hl.astype(dtype)[:, None]
    d = x.data
    rows = d[..., wi0] + wl_ * (d[..., wi1] - d[..., wi0])
    out = rows[:, :, hi0, :] + hl_ * (rows[:, :, hi1, :] - rows[:, :, hi0, :])
    ah = _interp_matrix(h, out_h, hi0, hi1, hl).astype(dtype)
    aw = _interp_matrix(w, out_w, wi0, wi1, wl).astype(dtype)

    def bw(g):
        return (ah.T @ g @ aw,)

    return record(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# fully connected


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with ``weight`` stored ``[F, K]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = matmul(x, weight)
    return out + bias if bias is not None else out
