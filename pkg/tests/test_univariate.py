from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from cvrspline.oracle import dim_univariate_bruteforce
from cvrspline.univariate import (
    KnotError,
    KnotVector,
    QuadSpline1D,
    build_basis_1d,
    bump_ordinates,
    collocation_matrix_1d,
    exact_knots,
    is_c1,
    map_phi_1d,
)

knot_lists = st.lists(st.integers(1, 40), min_size=1, max_size=9).map(
    lambda gaps: [0] + list(np.cumsum(gaps) / 8.0)
)


def test_bump_formulas_symbolic():
    t0, t1, t2, t3, a, b = sp.symbols("t0 t1 t2 t3 a b", real=True)
    # independent derivation: derivative continuity of the three pieces
    # (0, 0, a) on [t0, t1], (a, 1, b) on [t1, t2], (b, 0, 0) on [t2, t3]
    eqs = [
        sp.Eq(2 * (a - 0) / (t1 - t0), 2 * (1 - a) / (t2 - t1)),
        sp.Eq(2 * (b - 1) / (t2 - t1), 2 * (0 - b) / (t3 - t2)),
    ]
    sol = sp.solve(eqs, [a, b], dict=True)[0]
    got = bump_ordinates(t0, t1, t2, t3)
    assert sp.simplify(got[0][2] - sol[a]) == 0
    assert sp.simplify(got[1][0] - sol[a]) == 0
    assert sp.simplify(got[1][2] - sol[b]) == 0
    assert sp.simplify(got[2][0] - sol[b]) == 0
    assert sp.simplify(got[0][2] - (t1 - t0) / (t2 - t0)) == 0
    assert sp.simplify(got[2][0] - ((t2 - t1) / (t1 - t3) + 1)) == 0


def test_bump_example_exact():
    got = bump_ordinates(*exact_knots([0, 1, 4, 5]))
    assert got[0][2] == Fraction(1, 4)
    assert got[2][0] == Fraction(1, 4)


def test_knot_validation():
    with pytest.raises(KnotError):
        KnotVector.of([0])
    with pytest.raises(KnotError):
        KnotVector.of([0, 1, 1])


def test_extended_mirrors_end_intervals():
    kv = KnotVector.of([0, 1, 3]).extended()
    assert kv.knots == (-2, -1, 0, 1, 3, 5, 7)


@given(knot_lists)
def test_basis_properties(knots):
    kv = KnotVector.of(knots)
    basis = build_basis_1d(kv)
    assert len(basis) == kv.n + 2 == dim_univariate_bruteforce(knots)
    x = np.linspace(knots[0], knots[-1], 257)
    vals = np.array([b(x) for b in basis])
    assert np.abs(vals.sum(axis=0) - 1).max() <= 1e-12
    assert vals.min() >= -1e-14
    for b in basis:
        assert is_c1(b, 1e-12)


@given(knot_lists)
def test_extended_bumps_satisfy_phi_and_hbc(knots):
    ext_basis = build_basis_1d(knots, restrict=False)
    for i, b in enumerate(ext_basis):
        assert is_c1(b, 1e-12, hbc=True)
        phi = map_phi_1d(b)
        assert phi[i + 1] == 1
        assert all(v == 0 for k, v in phi.items() if k != i + 1)


def test_exact_partition_of_unity_with_fractions():
    knots = exact_knots([0, 0.5, 2, 2.25, 7])
    basis = build_basis_1d(knots)
    for i in range(len(knots) - 1):
        for j in range(3):
            assert sum(b.ords.get(i, (0, 0, 0))[j] for b in basis) == 1


def test_collocation_full_rank():
    knots = [0, 1, 1.5, 4, 4.5]
    basis = build_basis_1d(knots)
    pts = [0] + [0.5 * (a + b) for a, b in zip(knots, knots[1:])] + [knots[-1]]
    assert np.linalg.matrix_rank(collocation_matrix_1d(basis, pts)) == len(basis)


def test_spline_eval_and_csv():
    kv = KnotVector.of([0.0, 1.0, 2.0])
    p = QuadSpline1D(kv, {0: (0, 1, 2), 1: (2, 3, 4)})
    assert p(0.5) == pytest.approx(1.0)
    assert p.derivative(1.5) == pytest.approx(2.0)
    assert p.support() == (0.0, 2.0)
    assert p.to_csv().splitlines()[0] == "interval,b0,b1,b2"
    assert p(5.0) == 0.0
