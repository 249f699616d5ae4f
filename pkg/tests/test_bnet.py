from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvrspline.bnet import (
    BNetSpline,
    BnetError,
    bernstein2,
    center_ordinate,
    check_c1,
    chebyshev_points,
    eval_patch,
    eval_spline,
    from_polynomial,
    propagate_c1,
    reexpress,
)
from cvrspline.mesh import EAST, NORTH, HierarchicalTMesh

coef = st.floats(-5, 5, allow_nan=False)


def test_bernstein_partition():
    t = np.linspace(0, 1, 11)
    B = bernstein2(t)
    assert B.shape == (11, 3)
    assert np.allclose(B.sum(axis=1), 1)
    assert np.all(B >= 0)


def test_eval_patch_corners_and_centre():
    b = np.arange(9.0).reshape(3, 3)
    rect = (1.0, 3.0, -1.0, 0.0)
    assert eval_patch(b, rect, 1.0, -1.0) == pytest.approx(b[0, 0])
    assert eval_patch(b, rect, 3.0, 0.0) == pytest.approx(b[2, 2])
    assert center_ordinate(b) == b[1, 1]


@given(st.lists(coef, min_size=5, max_size=5))
def test_reexpress_is_the_same_polynomial(c):
    src, dst = (0.0, 1.0, 0.0, 2.0), (0.25, 3.0, -1.0, 0.5)
    m = HierarchicalTMesh.tensor([0.0, 1.0], [0.0, 2.0])
    b = from_polynomial(m, {(0, 0): c[0], (1, 0): c[1], (0, 1): c[2], (1, 1): c[3], (2, 0): c[4]}).nets["L0:(0,0)"]
    g = lambda x, y: c[0] + c[1] * x + c[2] * y + c[3] * x * y + c[4] * x * x
    d = reexpress(b, src, dst)
    pts = np.random.default_rng(0).uniform(size=(20, 2))
    xs = dst[0] + pts[:, 0] * (dst[1] - dst[0])
    ys = dst[2] + pts[:, 1] * (dst[3] - dst[2])
    assert np.allclose(eval_patch(d, dst, xs, ys), g(xs, ys), atol=1e-9 * (1 + np.abs(c).max()) * 50)


def test_reexpress_exact_with_fractions():
    b = np.array([[Fraction(i * 3 + j) for j in range(3)] for i in range(3)], dtype=object)
    src = (Fraction(0), Fraction(1), Fraction(0), Fraction(1))
    dst = (Fraction(1, 2), Fraction(3, 4), Fraction(0), Fraction(1, 4))
    there = reexpress(b, src, dst)
    back = reexpress(there, dst, src)
    assert all(x == y for x, y in zip(back.ravel(), b.ravel()))


def test_propagate_c1_gives_c1_pair(rng):
    m = HierarchicalTMesh.tensor([0, 1], [0, 1]).subdivide("L0:(0,0)")
    # random net on q0, rows of q1 across its east side, plus free far row
    b0 = rng.standard_normal((3, 3))
    r0, r1 = m.real_rect("L0:(0,0)/q0"), m.real_rect("L0:(0,0)/q1")
    rows = propagate_c1(b0, r0, EAST, r1)
    assert rows.shape == (2, 3)
    b1 = reexpress(b0, r0, r1)
    assert np.allclose(rows, b1[:2])
    b1[2] = rng.standard_normal(3)  # far row is free
    sp = BNetSpline(m, {"L0:(0,0)/q0": b0, "L0:(0,0)/q1": b1}, hbc=False)
    # the pair is C1 across the shared edge; elsewhere it meets zero cells and is not
    _, _, bad = check_c1(sp, 1e-9)
    assert ("L0:(0,0)/q0", "L0:(0,0)/q1") not in bad and ("L0:(0,0)/q1", "L0:(0,0)/q0") not in bad


def test_propagate_requires_adjacency():
    with pytest.raises(BnetError):
        propagate_c1(np.zeros((3, 3)), (0, 1, 0, 1), NORTH, (0, 1, 2, 3))
    with pytest.raises(BnetError):
        reexpress(np.zeros((3, 3)), (0, 0, 0, 1), (0, 1, 0, 1))


def test_check_c1_polynomial_and_kink(fig15):
    p = from_polynomial(fig15, {(2, 0): 1.0, (1, 2): -0.3, (0, 0): 2.0})
    ok, worst, bad = check_c1(p, 1e-9)
    assert ok and worst < 1e-12 and not bad
    # perturb one interior ordinate next to an edge
    cid = next(iter(sorted(p.nets)))
    nets = {k: v.copy() for k, v in p.nets.items()}
    nets[cid][2, 1] += 1e-3
    ok, worst, bad = check_c1(BNetSpline(fig15, nets, hbc=False), 1e-9)
    assert not ok and worst > 1e-6


def test_check_c1_hbc_boundary(fig15):
    p = from_polynomial(fig15, {(0, 0): 1.0}, hbc=True)
    ok, _, bad = check_c1(p, 1e-9)
    assert not ok and bad


def test_chebyshev_points_include_ends():
    pts = chebyshev_points(0.0, 2.0, 5)
    assert pts[0] == pytest.approx(0.0) and pts[-1] == pytest.approx(2.0) and len(pts) == 5


@given(st.lists(coef, min_size=4, max_size=4))
def test_eval_spline_matches_polynomial(c):
    m = HierarchicalTMesh.tensor([0, 1, 2.5], [0, 1]).subdivide("L0:(1,0)")
    sp = from_polynomial(m, {(0, 0): c[0], (1, 0): c[1], (2, 2): c[2], (1, 1): c[3]})
    x = np.linspace(0, 2.5, 17)
    y = np.linspace(0, 1, 17)
    want = c[0] + c[1] * x + c[2] * x * x * y * y + c[3] * x * y
    assert np.allclose(eval_spline(sp, x, y), want, atol=1e-10 * (1 + np.abs(c).max()) * 40)
    assert np.all(eval_spline(sp, [-1.0, 3.0], [0.5, 0.5]) == 0)
