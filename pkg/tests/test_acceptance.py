"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION k ... PASS|FAIL`` line (also repeated
in the pytest terminal summary).  Run directly with
``python tests/test_acceptance.py`` for the lines alone.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import sympy as sp
from scipy.interpolate import BSpline

sys.path.insert(0, str(Path(__file__).parent))

from conftest import fig15_mesh  # noqa: E402

from cvrspline.basis import build_basis, cell_grid, map_phi  # noqa: E402
from cvrspline.bnet import check_c1, eval_spline  # noqa: E402
from cvrspline.cvr import dim_space  # noqa: E402
from cvrspline.fitting import FunctionData, fit_adaptive, franke, grid_points  # noqa: E402
from cvrspline.mesh import HierarchicalTMesh, SCALE, extend, simplify  # noqa: E402
from cvrspline.oracle import (  # noqa: E402
    constraint_residual,
    dim_bruteforce,
    dim_univariate_bruteforce,
    random_hierarchical_mesh,
)
from cvrspline.univariate import build_basis_1d, bump_ordinates  # noqa: E402

SEEDS = range(100)
BASIS_SEEDS = range(20)
RESULTS: dict[int, str] = {}


def meshes(seeds=SEEDS):
    return [random_hierarchical_mesh(s, level0_max=5, max_level=3, split_prob=0.4) for s in seeds]


def report(k: int, name: str, ok: bool, detail: str) -> None:
    line = f"CRITERION {k} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS[k] = line
    print(line)


def test_criterion_1_dimension_equality():
    t0 = time.perf_counter()
    bad = []
    for s, m in zip(SEEDS, meshes()):
        for hbc in (True, False):
            a, b = dim_space(m, hbc), dim_bruteforce(m, hbc)
            if a != b:
                bad.append((s, hbc, a, b))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 120
    report(1, "dimension equality", ok, f"{200 - len(bad)}/200 equal, {dt:.1f}s < 120s")
    assert ok, bad


def test_criterion_2_simplification_safety():
    bad = []
    for s, m in zip(SEEDS, meshes()):
        sm = simplify(m)
        for hbc in (True, False):
            if dim_bruteforce(sm, hbc) != dim_bruteforce(m, hbc):
                bad.append((s, hbc))
    trace: list = []
    t2 = simplify(fig15_mesh(), trace)
    q = SCALE // 4
    fig = [(e.axis, e.pos, e.lo, e.hi) for e in trace] == [
        ("v", 3 * q, 4 * q, 6 * q),
        ("v", 5 * q, 4 * q, 6 * q),
        ("h", 5 * q, 2 * q, 6 * q),
    ] and len(t2.cells) == 13
    ok = not bad and fig
    report(2, "simplification safety", ok, f"{200 - len(bad)}/200 invariant, example sequence {'matches' if fig else 'differs'}")
    assert ok, bad


def test_criterion_3_basis_correctness():
    worst = {"c1": 0.0, "outside": 0.0, "oracle": 0.0, "phi": 0.0}
    nfun = 0
    for m in meshes(BASIS_SEEDS):
        bs = build_basis(m, hbc=True)
        x, y = cell_grid(m, 3)
        owner = np.repeat(list(m.cells), 9)
        V = bs.evaluate(x, y)
        for j, bf in enumerate(bs.functions):
            nfun += 1
            for sp_ in (bf.spline, bf.work_spline):
                worst["c1"] = max(worst["c1"], check_c1(sp_, 1e-9)[1])
            outside = ~np.isin(owner, list(bf.spline.nets))
            worst["outside"] = max(worst["outside"], float(np.abs(V[outside, j]).max(initial=0.0)))
            assert set(bf.work_spline.nets) <= set(bf.support_domain)
            worst["oracle"] = max(
                worst["oracle"],
                constraint_residual(m, bf.spline.nets, True),
                constraint_residual(bs.work_mesh, bf.work_spline.nets, True),
            )
            phi = map_phi(bf.work_spline, bs.cvr)
            worst["phi"] = max(worst["phi"], max(abs(v - float(k == bf.gcell)) for k, v in phi.items()))
    ok = worst["c1"] <= 1e-9 and worst["outside"] == 0.0 and worst["oracle"] <= 1e-9 and worst["phi"] <= 1e-10
    detail = f"{nfun} functions; c1 {worst['c1']:.1e}, oracle {worst['oracle']:.1e}, phi {worst['phi']:.1e}, outside {worst['outside']:.1e}"
    report(3, "basis correctness", ok, detail)
    assert ok


def test_criterion_4_open_mesh_properties():
    pu = 0.0
    smin = np.inf
    for m in meshes(BASIS_SEEDS):
        bs = build_basis(m, hbc=False)
        x, y = cell_grid(m, 10)
        pu = max(pu, float(np.abs(bs.evaluate(x, y).sum(axis=1) - 1).max()))
        C = bs.collocation_matrix()
        C = C / np.linalg.norm(C, axis=1, keepdims=True)
        smin = min(smin, float(np.linalg.svd(C, compute_uv=False).min()))
    ok = pu <= 1e-9 and smin > 1e-10
    report(4, "open-mesh properties", ok, f"partition of unity {pu:.1e}, smallest singular value {smin:.2e}")
    assert ok


def classical(mesh, x, y):
    e = extend(mesh)
    X, Y = e.x_knots, e.y_knots
    bx = [BSpline.basis_element(X[i : i + 4], extrapolate=False) for i in range(len(X) - 3)]
    by = [BSpline.basis_element(Y[i : i + 4], extrapolate=False) for i in range(len(Y) - 3)]
    return np.array([np.nan_to_num(fx(x)) * np.nan_to_num(fy(y)) for fy in by for fx in bx]).T


def test_criterion_5_tensor_meshes():
    rng = np.random.default_rng(7)
    worst, dims_ok = 0.0, True
    for cx, cy in [(1, 1), (2, 3), (4, 4), (5, 2)]:
        xk = np.concatenate([[0], np.cumsum(rng.uniform(0.5, 2, cx))])
        yk = np.concatenate([[0], np.cumsum(rng.uniform(0.5, 2, cy))])
        m = HierarchicalTMesh.tensor(xk, yk)
        bs = build_basis(m, hbc=False)
        dims_ok &= len(bs) == (cx + 2) * (cy + 2) == dim_space(m, False)
        x, y = cell_grid(m, 5)
        A, B = bs.evaluate(x, y), classical(m, x, y)
        used = set()
        for j in range(A.shape[1]):
            d = np.abs(B - A[:, [j]]).max(axis=0)
            k = int(np.argmin(d))
            dims_ok &= k not in used
            used.add(k)
            worst = max(worst, float(d[k]))
    ok = dims_ok and worst <= 1e-10
    report(5, "tensor meshes", ok, f"max deviation from B-splines {worst:.1e}, dims {'match' if dims_ok else 'differ'}")
    assert ok


def test_criterion_6_univariate():
    t0, t1, t2, t3, a, b = sp.symbols("t0 t1 t2 t3 a b", real=True)
    sol = sp.solve(
        [sp.Eq(a / (t1 - t0), (1 - a) / (t2 - t1)), sp.Eq((b - 1) / (t2 - t1), -b / (t3 - t2))], [a, b], dict=True
    )[0]
    got = bump_ordinates(t0, t1, t2, t3)
    symbolic = (
        sp.simplify(got[0][2] - (t1 - t0) / (t2 - t0)) == 0
        and sp.simplify(got[2][0] - ((t2 - t1) / (t1 - t3) + 1)) == 0
        and sp.simplify(got[0][2] - sol[a]) == 0
        and sp.simplify(got[2][0] - sol[b]) == 0
    )
    rng = np.random.default_rng(11)
    pu, dims = 0.0, True
    for n in range(1, 12):
        knots = np.concatenate([[0], np.cumsum(rng.uniform(0.1, 3, n))])
        basis = build_basis_1d(knots)
        dims &= len(basis) == n + 2 == dim_univariate_bruteforce(knots)
        x = np.linspace(knots[0], knots[-1], 1001)
        pu = max(pu, float(np.abs(sum(bf(x) for bf in basis) - 1).max()))
    ok = symbolic and pu <= 1e-12 and dims
    report(6, "univariate", ok, f"symbolic {'ok' if symbolic else 'mismatch'}, partition of unity {pu:.1e}, dims {'match' if dims else 'differ'}")
    assert ok


def test_criterion_7_fitting():
    quad = FunctionData(
        lambda x, y: np.column_stack([x, y, 0.3 + x * y - 2 * x * x * y + y * y * x * x]), grid_points(50)
    )
    mq = fit_adaptive(quad, tol=1e-9, max_iter=3)
    quad_ok = mq.converged and len(mq.log) == 1 and mq.log[0].max_error <= 1e-9

    data = FunctionData(lambda x, y: np.column_stack([x, y, franke(x, y)]), grid_points(100))
    t0 = time.perf_counter()
    mf = fit_adaptive(data, tol=1e-3, max_iter=8)
    dt = time.perf_counter() - t0
    rows = mf.report()["iterations"]
    schema = all({"n", "dim", "max_error", "seconds"} <= set(r) for r in rows)
    franke_ok = mf.converged and len(rows) <= 8 and rows[-1]["max_error"] < 1e-3 and dt < 60
    ok = quad_ok and franke_ok and schema
    report(
        7,
        "fitting",
        ok,
        f"biquadratic {mq.log[0].max_error:.1e} in {len(mq.log)} iteration; "
        f"Franke {rows[-1]['max_error']:.2e} after {len(rows)} iterations, dim {rows[-1]['dim']}, {dt:.1f}s",
    )
    assert ok


if __name__ == "__main__":
    import logging

    logging.disable(logging.WARNING)
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion"):
            try:
                fn()
            except AssertionError:
                pass
