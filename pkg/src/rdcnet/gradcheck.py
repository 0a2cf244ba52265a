"""Central finite-difference checks of reverse-mode gradients.

Everything runs on a float64 shadow of the graph: inputs are promoted to
float64 and modules should be cast with ``module.to_dtype(np.float64)``
beforehand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import Tensor, backward, mul, sum_


@dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    worst: tuple
    tolerance: float
    refined: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(fn, inputs=(), params=(), n_coords: int = 20, h: float = 1e-3,
              tol: float = 1e-3, rng: Rng | None = None, refine: bool = False,
              min_step: float = 1e-6) -> GradcheckResult:
    """Compare analytic and finite-difference gradients of ``fn(*inputs)``.

    ``inputs`` are arrays (promoted to float64 leaves) and ``params`` are
    existing float64 tensors (e.g. module parameters) that ``fn`` closes
    over. A non-scalar output is reduced with fixed random weights so that
    no gradient vanishes by symmetry. At least ``n_coords`` coordinates are
    sampled, spread round-robin over all checked tensors.

    With ``refine`` a coordinate that misses ``tol`` is re-measured with the
    step divided by 10 until two successive quotients agree (or the step
    would drop below ``min_step``); the last quotient is the one judged.
    This separates ReLU kinks lying within ``h`` of the point (the
    difference quotient converges once the step clears the kink) from wrong
    gradients (it never converges). ``refined`` counts such coordinates.
    """
    rng = rng if rng is not None else Rng(1234)
    leaves = [Tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
                     requires_grad=True) for x in inputs]
    checked = leaves + [p for p in params if p.requires_grad]
    if not checked:
        raise ValueError("nothing to check")

    out = fn(*leaves)
    weights = None
    if out.size != 1:
        weights = rng.normal(size=out.shape)

    def loss_of():
        o = fn(*leaves)
        if weights is None:
            return float(o.data.reshape(()))
        return float((o.data * weights).sum())

    for t in checked:
        t.grad = np.zeros_like(t.data)
    o = fn(*leaves)
    loss = o if weights is None else sum_(mul(o, Tensor(weights)))
    backward(loss)
    analytic = [t.grad.copy() for t in checked]

    coords = []
    for k in range(max(n_coords, len(checked))):
        ti = k % len(checked)
        coords.append((ti, int(rng.integers(0, checked[ti].size))))

    def central(view, flat, step):
        orig = view[flat]
        view[flat] = orig + step
        plus = loss_of()
        view[flat] = orig - step
        minus = loss_of()
        view[flat] = orig
        return (plus - minus) / (2 * step)

    worst, worst_at, refined = 0.0, None, 0
    for ti, flat in coords:
        view = checked[ti].data.reshape(-1)
        exact = float(analytic[ti].reshape(-1)[flat])
        step = h
        err = relative_error(exact, central(view, flat, step))
        if refine and err > tol and step / 10 >= min_step:
            refined += 1
            prev = central(view, flat, step)
            while step / 10 >= min_step:
                step /= 10
                cur = central(view, flat, step)
                err = relative_error(exact, cur)
                if relative_error(prev, cur) <= 0.01 * tol:
                    break
                prev = cur
        if err > worst or worst_at is None:
            worst, worst_at = err, (ti, flat)
    return GradcheckResult(worst, len(coords), worst_at, tol, refined)
