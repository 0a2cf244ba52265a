"""Slow, obviously-correct references used only by the tests."""

import math

import numpy as np


def conv_naive(x, w, bias=None, stride=1, padding=0, dilation=1):
    """Six nested loops over (n, f, i, j, c, a, b); zero padding, no flip."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b_ in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for ci in range(c):
                        for a in range(kh):
                            for b in range(kw):
                                r = i * stride + a * dilation - padding
                                s = j * stride + b * dilation - padding
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[b_, ci, r, s] * w[o, ci, a, b]
                    out[b_, o, i, j] = acc
    return out


def conv_naive_asym(x, w, pad_h, pad_w):
    """Loop convolution with separate vertical/horizontal padding, stride 1."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad_h, wd + 2 * pad_w))
    xp[:, :, pad_h:pad_h + h, pad_w:pad_w + wd] = x
    ho, wo = h + 2 * pad_h - kh + 1, wd + 2 * pad_w - kw + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(ho):
        for j in range(wo):
            out[:, :, i, j] = np.einsum("ncab,fcab->nf", xp[:, :, i:i + kh, j:j + kw], w)
    return out


def matmul_loops(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return np.array([[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(n)]
                     for i in range(m)])


def bilinear_point(img, out_h, out_w):
    """Two-stage interpolation: along a row first, then between rows.

    ``img`` is a 2-D array. Source coordinate ``(i + 0.5) * in / out - 0.5``,
    negative values clamped to 0 and the upper neighbour clamped to the edge.
    """
    h, w = img.shape

    def coord(i, n_in, n_out):
        s = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        lo = min(int(math.floor(s)), n_in - 1)
        return lo, min(lo + 1, n_in - 1), s - lo

    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        y0, y1, ty = coord(i, h, out_h)
        for j in range(out_w):
            x0, x1, tx = coord(j, w, out_w)
            top = img[y0, x0] * (1 - tx) + img[y0, x1] * tx
            bottom = img[y1, x0] * (1 - tx) + img[y1, x1] * tx
            out[i, j] = top * (1 - ty) + bottom * ty
    return out


def softmax_ref(v):
    v = np.asarray(v, dtype=np.float64).ravel()
    e = np.exp(v - v.max())
    return e / e.sum()


def smoothed_ce_ref(logits, labels, eps):
    logits = np.asarray(logits, dtype=np.float64)
    n, k = logits.shape
    total = 0.0
    for i in range(n):
        m = logits[i].max()
        lse = m + math.log(sum(math.exp(z - m) for z in logits[i]))
        for c in range(k):
            q = (1 - eps) * (c == labels[i]) + eps / k
            total -= q * (logits[i, c] - lse)
    return total / n


def binomial_sigma(p, n):
    """Standard deviation of a success fraction over ``n`` Bernoulli(p) draws."""
    return math.sqrt(p * (1 - p) / n)


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` at every coordinate of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = f(x)
        flat[i] = orig - h
        minus = f(x)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return g
