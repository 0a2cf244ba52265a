"""Self-check suites run by ``rdcnet verify``.

Every check compares library output with an independent reference written
here in the plainest possible form (explicit loops, scalar formulas,
finite differences) or with an exact algebraic property.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import CE, FGFE, MRDC, MRDCBlock
from .errors import ShapeError
from .gradcheck import gradcheck
from .layers import BatchNorm2d, Parameter
from .masking import STRATEGIES, MaskConfig, apply_masks, sample_mask
from .network import ArchConfig, build_network
from .rng import Rng
from .tensor import Tensor, no_grad, softmax_flat
from .training import cosine_lr, label_smoothed_ce, sgd_step


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# references


def reference_conv(x, w, stride=1, padding=0, dilation=1):
    """Direct summation over every output position and kernel tap."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(ho):
        for j in range(wo):
            for a in range(kh):
                for b in range(kw):
                    patch = xp[:, :, i * stride + a * dilation, j * stride + b * dilation]
                    out[:, :, i, j] += patch @ w[:, :, a, b].T.astype(np.float64)
    return out


def reference_bilinear(x, out_h, out_w):
    """Pointwise half-pixel bilinear resize with border clamping."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))

    def src(i, n_in, n_out):
        s = max((i + 0.5) * n_in / n_out - 0.5, 0.0)
        i0 = min(int(math.floor(s)), n_in - 1)
        return i0, min(i0 + 1, n_in - 1), s - i0

    for i in range(out_h):
        y0, y1, ly = src(i, h, out_h)
        for j in range(out_w):
            x0, x1, lx = src(j, w, out_w)
            out[:, :, i, j] = ((1 - ly) * (1 - lx) * x[:, :, y0, x0] + (1 - ly) * lx * x[:, :, y0, x1]
                               + ly * (1 - lx) * x[:, :, y1, x0] + ly * lx * x[:, :, y1, x1])
    return out


# ---------------------------------------------------------------------------
# suites


def suite_shapes():
    checks = []
    bad = 0
    total = 0
    for k in (1, 3, 5):
        for s in (1, 2):
            for p in range(4):
                for d in (1, 2, 3):
                    w = Tensor(np.zeros((1, 1, k, k), np.float32))
                    for n in range(8, 34):
                        total += 1
                        expected = math.floor((n + 2 * p - d * (k - 1) - 1) / s) + 1
                        try:
                            got = ops.conv2d(Tensor(np.zeros((1, 1, n, n), np.float32)), w,
                                             stride=s, padding=p, dilation=d).shape[2:]
                        except ShapeError:
                            got = None
                        want = (expected, expected) if expected >= 1 else None
                        bad += got != want
    checks.append(Check("shapes", f"conv extent grid ({total} cases)", bad == 0,
                        f"{bad} mismatches"))

    ok = all(ops.ConvSpec.dilated(8, 8, d).output_hw(h, h) == (h, h)
             for d in (1, 2, 3) for h in range(4, 33))
    checks.append(Check("shapes", "dilated 3x3 with p=d preserves resolution", ok))

    net = build_network(ArchConfig(), Rng(0))
    trace = dict(net.trace(Tensor(np.zeros((1, 3, 32, 32), np.float32))))
    want = {"stem": (1, 64, 32, 32), "layer1": (1, 64, 32, 32), "layer2": (1, 128, 16, 16),
            "layer3": (1, 256, 8, 8), "layer4": (1, 512, 4, 4), "fc": (1, 10)}
    ok = all(trace.get(k) == v for k, v in want.items())
    checks.append(Check("shapes", "default network trace on 32x32", ok,
                        f"layer4 {trace.get('layer4')}"))

    net4 = build_network(ArchConfig(stem="large_input"), Rng(0))
    trace = dict(net4.trace(Tensor(np.zeros((1, 3, 224, 224), np.float32))))
    ok = trace["stem"] == (1, 64, 56, 56) and trace["layer4"] == (1, 512, 7, 7)
    checks.append(Check("shapes", "large-input stem trace on 224x224", ok,
                        f"stem {trace['stem']}"))
    return checks


def suite_oracles():
    rng = Rng(11)
    checks = []
    worst = 0.0
    for _ in range(12):
        n, c, f = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        h = int(rng.integers(6, 17))
        k = (1, 3, 5)[int(rng.integers(0, 3))]
        d = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 4))
        if h + 2 * p - d * (k - 1) - 1 < 0:
            p = d * (k - 1) // 2 + 1
        x = rng.normal(size=(n, c, h, h)).astype(np.float32)
        w = rng.normal(size=(f, c, k, k)).astype(np.float32)
        got = ops.conv2d(Tensor(x), Tensor(w), stride=s, padding=p, dilation=d).data
        worst = max(worst, float(np.abs(got - reference_conv(x, w, s, p, d)).max()))
    checks.append(Check("oracles", "conv2d vs direct summation", worst <= 1e-5,
                        f"max abs {worst:.2e}"))

    worst = 0.0
    for (h, w, oh, ow) in [(1, 1, 8, 8), (2, 3, 7, 5), (4, 4, 8, 8), (5, 5, 5, 5), (3, 6, 9, 4)]:
        x = rng.normal(size=(2, 3, h, w))
        got = ops.bilinear_upsample(Tensor(x, dtype=np.float64), oh, ow).data
        worst = max(worst, float(np.abs(got - reference_bilinear(x, oh, ow)).max()))
    checks.append(Check("oracles", "bilinear vs pointwise formula", worst <= 1e-12,
                        f"max abs {worst:.2e}"))

    x = rng.normal(size=(4, 5, 3, 3))
    bn = BatchNorm2d(5).to_dtype(np.float64)
    got = bn(Tensor(x, dtype=np.float64)).data
    mu = x.mean(axis=(0, 2, 3), keepdims=True)
    var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
    err = float(np.abs(got - (x - mu) / np.sqrt(var + 1e-5)).max())
    checks.append(Check("oracles", "batchnorm (train) vs formula", err <= 1e-10,
                        f"max abs {err:.2e}"))

    logits = rng.normal(size=(6, 10))
    labels = rng.integers(0, 10, size=6)
    got = float(label_smoothed_ce(Tensor(logits, dtype=np.float64), labels, 0.1).data)
    ref = 0.0
    for i in range(6):
        m = max(logits[i])
        lse = m + math.log(sum(math.exp(v - m) for v in logits[i]))
        for k in range(10):
            q = 0.9 * (k == labels[i]) + 0.1 / 10
            ref -= q * (logits[i][k] - lse)
    ref /= 6
    checks.append(Check("oracles", "label-smoothed CE vs direct formula",
                        abs(got - ref) <= 1e-10, f"abs {abs(got - ref):.2e}"))
    return checks


def _gc_entry(name, fn, inputs, params, refine):
    t = time.perf_counter()
    r = gradcheck(fn, inputs, params, n_coords=20, h=1e-3, tol=1e-3, rng=Rng(3), refine=refine)
    note = f", {r.refined} refined" if r.refined else ""
    return Check("gradcheck", name, r.passed,
                 f"max rel {r.max_rel_error:.1e} over {r.checked} coords{note} "
                 f"({time.perf_counter() - t:.1f}s)")


def gradcheck_cases():
    """``(name, fn, inputs, params, refine)`` for every registered unit.

    All checks start from a step of 1e-3. Only the whole network refines
    the step: with hundreds of ReLU inputs a 1e-3 nudge of an early weight
    often moves one across zero, and that kink, not the gradient, then
    dominates the difference quotient.
    """
    rng = Rng(5)
    f64 = np.float64
    x8 = rng.normal(size=(2, 8, 6, 6))
    cases = []

    w = rng.normal(size=(4, 3, 3, 3))
    cases.append(("conv2d (d=2, s=1)", lambda x, w: ops.conv2d(x, w, padding=2, dilation=2),
                  [rng.normal(size=(2, 3, 7, 7)), w], [], False))
    cases.append(("conv2d (s=2)", lambda x, w: ops.conv2d(x, w, stride=2, padding=1),
                  [rng.normal(size=(2, 3, 7, 7)), w], [], False))

    bn = BatchNorm2d(4).to_dtype(f64)
    bn.weight.data[:] = rng.uniform(0.5, 1.5, 4)
    cases.append(("batchnorm (train)", lambda x: bn(x), [rng.normal(size=(3, 4, 3, 3))],
                  bn.parameters(), False))
    cases.append(("bilinear_upsample", lambda x: ops.bilinear_upsample(x, 7, 5),
                  [rng.normal(size=(2, 2, 3, 4))], [], False))

    fgfe = FGFE(8, rng.child(1)).to_dtype(f64)
    cases.append(("FGFE", lambda x: fgfe(x), [x8], fgfe.parameters(), False))
    ce = CE(16, 4, rng.child(2)).to_dtype(f64)
    cases.append(("CE", lambda x: ce(x), [rng.normal(size=(2, 16, 4, 4))], ce.parameters(), False))
    mrdc = MRDC(8, MaskConfig("null_mask"), rng.child(3), rng.child(4)).to_dtype(f64)
    cases.append(("MRDC (null_mask)", lambda x: mrdc(x), [x8], mrdc.parameters(), False))
    block = MRDCBlock(8, 16, True, MaskConfig("null_mask"), rng.child(5),
                      rng.child(6)).to_dtype(f64)
    cases.append(("MRDC block (downsampling)", lambda x: block(x), [x8], block.parameters(), False))

    cfg = ArchConfig(blocks=(1, 1, 1, 1), widths=(8, 8, 8, 8), classes=2, reduction=4,
                     mask=MaskConfig("null_mask"))
    net = build_network(cfg, Rng(7)).to_dtype(f64)
    labels = np.array([0, 1, 1, 0])
    cases.append(("network [8,8,8,8] + smoothed CE",
                  lambda x: label_smoothed_ce(net(x), labels, 0.1),
                  [rng.normal(size=(4, 3, 8, 8))], net.parameters(), True))
    return cases


def suite_gradcheck():
    return [_gc_entry(*case) for case in gradcheck_cases()]


def retention_bound(tau, n, sigmas=4.0):
    return sigmas * math.sqrt(tau * (1 - tau) / n)


def suite_masks():
    checks = []
    n = 200_000
    for tau in (0.25, 0.5, 0.9):
        frac = float(sample_mask((n,), tau, Rng(21, (int(tau * 100),))).mean())
        bound = retention_bound(tau, n)
        checks.append(Check("masks", f"retention at tau={tau}", abs(frac - tau) <= bound,
                            f"{frac:.5f} (4 sigma = {bound:.5f})"))
    x = Tensor(Rng(2).normal(size=(3, 8, 5, 5)).astype(np.float32))
    for strategy in STRATEGIES:
        keep = apply_masks(x, MaskConfig(strategy, 1.0), Rng(1))
        drop = apply_masks(x, MaskConfig(strategy, 0.0), Rng(1))
        ev = apply_masks(x, MaskConfig(strategy, 0.5), Rng(1), training=False)
        zero_ok = strategy == "null_mask" or not drop.data.any()
        checks.append(Check("masks", f"{strategy}: tau=1 identity, tau=0 zero, eval identity",
                            np.array_equal(keep.data, x.data) and zero_ok
                            and np.array_equal(ev.data, x.data)))
    m = apply_masks(Tensor(np.ones((4, 6, 3, 3), np.float32)), MaskConfig("c_mask", 0.5),
                    Rng(8)).data
    ok = (m == m[:, :, :1, :1]).all() and (m == m[:1]).all()
    checks.append(Check("masks", "channel mask constant over space and batch", bool(ok)))
    return checks


def suite_schedule():
    checks = []
    ok = (cosine_lr(0, 200, 0.1, 0.0) == 0.1 and cosine_lr(200, 200, 0.1, 0.0) == 0.0
          and abs(cosine_lr(100, 200, 0.1, 0.0) - 0.05) <= 1e-15)
    checks.append(Check("schedule", "cosine endpoints and midpoint", ok))
    lrs = [cosine_lr(t, 50, 0.1, 0.001) for t in range(51)]
    checks.append(Check("schedule", "cosine monotone non-increasing",
                        all(a >= b for a, b in zip(lrs, lrs[1:]))))
    p = Parameter(np.ones(3, np.float64))
    v = [np.zeros(3)]
    seen = []
    for _ in range(2):
        p.grad = np.full(3, 2.0)
        sgd_step([p], v, 0.0, 0.9, 0.0)
        seen.append(float(v[0][0]))
    checks.append(Check("schedule", "momentum accumulation (1, 1.9) x g",
                        seen == [2.0, 3.8], f"{seen}"))
    return checks


def suite_attention():
    checks = []
    rng = Rng(9)
    ce = CE(32, 16, rng.child(0)).to_dtype(np.float64)
    x = rng.normal(size=(3, 32, 5, 6))
    with no_grad():
        parts = ce.parts(Tensor(x, dtype=np.float64))
    attn = parts["attention"].data
    sums = attn.reshape(3, -1).sum(axis=1)
    checks.append(Check("attention", "attention sums to 1 per sample",
                        float(np.abs(sums - 1).max()) <= 1e-6))
    gate = parts["gate"].data
    checks.append(Check("attention", "gate strictly inside (0, 1)",
                        bool(((gate > 0) & (gate < 1)).all())))
    ref = np.einsum("nchw,nhw->nc", x, attn[:, 0])
    err = float(np.abs(parts["context"].data[:, :, 0, 0] - ref).max())
    checks.append(Check("attention", "context equals attention-weighted sum", err <= 1e-6,
                        f"max abs {err:.1e}"))
    const = np.broadcast_to(rng.normal(size=(2, 32, 1, 1)), (2, 32, 5, 6)).copy()
    with no_grad():
        a = ce.parts(Tensor(const, dtype=np.float64))["attention"].data
    dev = float(np.abs(a - 1 / 30).max())
    checks.append(Check("attention", "constant input gives uniform attention", dev < 1e-6,
                        f"max dev {dev:.1e}"))
    sm = softmax_flat(Tensor(np.array([[[[1000.0, 1000.0]]]]), dtype=np.float64)).data
    checks.append(Check("attention", "softmax stable for large logits",
                        bool(np.allclose(sm, 0.5))))
    return checks


SUITES = {
    "shapes": suite_shapes,
    "oracles": suite_oracles,
    "gradcheck": suite_gradcheck,
    "masks": suite_masks,
    "schedule": suite_schedule,
    "attention": suite_attention,
}


def run_suites(name: str) -> list:
    """Run one suite or ``all``; raises ``KeyError`` for unknown names."""
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise KeyError(name)
    checks = []
    for n in names:
        checks.extend(SUITES[n]())
    return checks


def format_table(checks) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'suite':<10} {'check':<{width}}  result  detail"]
    for c in checks:
        lines.append(f"{c.suite:<10} {c.name:<{width}}  {'PASS' if c.passed else 'FAIL':<6}  "
                     f"{c.detail}")
    failed = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - failed}/{len(checks)} checks passed")
    return "\n".join(lines)
