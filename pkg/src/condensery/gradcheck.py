"""Central finite-difference verification of the autodiff primitives.

Shared by the test suite and the ``gradcheck`` CLI subcommand. Each check
builds a scalar ``sum(op(...))`` graph, runs backward, and compares every
analytic gradient entry against a central difference with step h = 1e-5.
Entries whose analytic value is below 1e-8 in magnitude are compared
absolutely (tolerance 1e-6), the rest relatively (tolerance 1e-3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T

H_STEP = 1e-5
REL_TOL = 1e-3
ABS_TOL = 1e-6
ZERO_CUT = 1e-8


@dataclass
class CheckResult:
    name: str
    worst_rel: float      # worst relative error among non-tiny entries
    worst_abs: float      # worst absolute error among tiny-analytic entries
    passed: bool
    detail: str = ""      # coordinates of the worst offender on failure


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = H_STEP) -> np.ndarray:
    """Central finite differences of scalar-valued ``f`` w.r.t. array ``x``.

    ``f`` must recompute from the current contents of ``x``.
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def compare(analytic: np.ndarray, numeric: np.ndarray, name: str, mask: np.ndarray | None = None) -> CheckResult:
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    m = np.ones_like(a, dtype=bool) if mask is None else mask.reshape(-1)
    worst_rel = 0.0
    worst_abs = 0.0
    detail = ""
    passed = True
    for i in np.nonzero(m)[0]:
        if abs(a[i]) < ZERO_CUT and abs(n[i]) < ZERO_CUT:
            err = abs(a[i] - n[i])
            worst_abs = max(worst_abs, err)
            if err > ABS_TOL:
                passed = False
                detail = detail or f"flat index {i}: analytic {a[i]:.3e} vs numeric {n[i]:.3e} (abs)"
        else:
            err = abs(a[i] - n[i]) / max(abs(a[i]), abs(n[i]))
            worst_rel = max(worst_rel, err)
            if err > REL_TOL:
                passed = False
                detail = detail or f"flat index {i}: analytic {a[i]:.6e} vs numeric {n[i]:.6e} (rel {err:.2e})"
    return CheckResult(name, worst_rel, worst_abs, passed, detail)


def check_op(name: str, build: Callable[[Sequence[T.Tensor]], T.Tensor], leaves: Sequence[np.ndarray],
             mask_fns: Sequence[Callable[[np.ndarray], np.ndarray] | None] | None = None) -> list[CheckResult]:
    """Check d sum(build(leaves)) / d leaf for every leaf array.

    ``build`` receives freshly wrapped leaf tensors and returns the graph
    output (any shape; it is reduced with sum_all here).
    """
    ts = [T.Tensor(x.copy()) for x in leaves]
    out = build(ts)
    root = out if out.values.size == 1 else T.sum_all(out)
    T.backward(root)
    results = []
    arrs = [l.values for l in ts]
    for i, (leaf, arr) in enumerate(zip(ts, leaves)):
        def f():
            ts2 = [T.Tensor(x) for x in arrs]
            o = build(ts2)
            r = o if o.values.size == 1 else T.sum_all(o)
            return r.item()
        num = numeric_grad(f, ts[i].values)
        mask = None
        if mask_fns is not None and mask_fns[i] is not None:
            mask = mask_fns[i](arr)
        results.append(compare(leaf.grad, num, f"{name}[arg{i}]", mask))
    return results


def run_suite(seed: int = 0) -> list[CheckResult]:
    """The full primitive + composed-network gradient suite."""
    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []

    # conv2d: random 2x3x5x5 input, 4x3x3x3 kernel
    x = rng.standard_normal((2, 3, 5, 5))
    k = rng.standard_normal((4, 3, 3, 3)) * 0.5
    b = rng.standard_normal(4)
    out += check_op("conv2d", lambda t: T.conv2d(t[0], t[1], t[2], stride=1, pad=1), [x, k, b])

    # instance_norm2d on 2x2x4x4
    xn = rng.standard_normal((2, 2, 4, 4))
    out += check_op("instance_norm2d", lambda t: T.instance_norm2d(t[0]), [xn])

    # relu away from the kink
    xr = rng.standard_normal((3, 6))
    out += check_op("relu", lambda t: T.relu(t[0]), [xr],
                    mask_fns=[lambda a: np.abs(a) > 1e-3])

    # avg_pool2d
    xp = rng.standard_normal((2, 3, 4, 4))
    out += check_op("avg_pool2d", lambda t: T.avg_pool2d(t[0], 2, 2), [xp])

    # linear 3x4 @ 4x2
    xl = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 2))
    bl = rng.standard_normal(2)
    out += check_op("linear", lambda t: T.linear(t[0], t[1], t[2]), [xl, w, bl])

    # softmax cross-entropy
    lg = rng.standard_normal((4, 3))
    lab = rng.integers(0, 3, size=4)
    out += check_op("softmax_cross_entropy_mean",
                    lambda t: T.softmax_cross_entropy_mean(t[0], lab), [lg])

    # composed conv -> norm -> relu -> pool -> linear -> CE network,
    # checked on a random subsample of parameter coordinates.
    out.append(_check_composed(rng))
    return out


def _check_composed(rng: np.random.Generator, n_coords: int = 20) -> CheckResult:
    B, C, Hh, Ww, O, K = 2, 2, 4, 4, 3, 2
    x = rng.standard_normal((B, C, Hh, Ww))
    kern = rng.standard_normal((O, C, 3, 3)) * 0.5
    kb = rng.standard_normal(O) * 0.1
    D = O * (Hh // 2) * (Ww // 2)
    w = rng.standard_normal((D, K)) * 0.5
    wb = rng.standard_normal(K) * 0.1
    labels = rng.integers(0, K, size=B)
    leaves = [kern, kb, w, wb]

    def run(arrs):
        t = [T.Tensor(a) for a in arrs]
        h = T.conv2d(T.Tensor(x), t[0], t[1], stride=1, pad=1)
        h = T.instance_norm2d(h)
        h = T.relu(h)
        h = T.avg_pool2d(h, 2, 2)
        h = T.reshape(h, (B, D))
        logits = T.linear(h, t[2], t[3])
        return T.softmax_cross_entropy_mean(logits, labels), t

    root, ts = run(leaves)
    T.backward(root)

    worst_rel = 0.0
    worst_abs = 0.0
    passed = True
    detail = ""
    sizes = [a.size for a in leaves]
    total = sum(sizes)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    for c in coords:
        li = 0
        off = int(c)
        while off >= sizes[li]:
            off -= sizes[li]
            li += 1
        flat = leaves[li].reshape(-1)
        orig = flat[off]
        h = H_STEP
        flat[off] = orig + h
        fp = run(leaves)[0].item()
        flat[off] = orig - h
        fm = run(leaves)[0].item()
        flat[off] = orig
        num = (fp - fm) / (2 * h)
        ana = ts[li].grad.reshape(-1)[off]
        if abs(ana) < ZERO_CUT and abs(num) < ZERO_CUT:
            err = abs(ana - num)
            worst_abs = max(worst_abs, err)
            ok = err <= ABS_TOL
        else:
            err = abs(ana - num) / max(abs(ana), abs(num))
            worst_rel = max(worst_rel, err)
            ok = err <= REL_TOL
        if not ok and passed:
            passed = False
            detail = f"param {li} flat index {off}: analytic {ana:.6e} vs numeric {num:.6e}"
    return CheckResult("composed_convnet", worst_rel, worst_abs, passed, detail)
