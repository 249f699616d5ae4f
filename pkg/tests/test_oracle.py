import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvrspline.bnet import from_polynomial
from cvrspline.mesh import HierarchicalTMesh, simplify
from cvrspline.oracle import (
    OracleSizeError,
    constraint_matrix,
    constraint_residual,
    dim_bruteforce,
    dim_univariate_bruteforce,
    nullspace,
    random_hierarchical_mesh,
)


def test_single_cell_hbc_is_zero():
    m = HierarchicalTMesh.tensor([0, 1], [0, 1])
    assert dim_bruteforce(m, hbc=True) == 0
    assert dim_bruteforce(m, hbc=False) == 9


@pytest.mark.parametrize("cx,cy", [(1, 2), (3, 3), (2, 5)])
def test_tensor_is_classical(cx, cy):
    m = HierarchicalTMesh.tensor(np.cumsum([0, 1, 2.5, 0.5, 1, 3])[: cx + 1], range(cy + 1))
    assert dim_bruteforce(m, hbc=False) == (cx + 2) * (cy + 2)


def test_exact_and_svd_agree(fig15, fig5):
    for m in (fig15, fig5):
        for hbc in (True, False):
            assert dim_bruteforce(m, hbc, "exact") == dim_bruteforce(m, hbc, "svd")


def test_size_bound(fig15):
    with pytest.raises(OracleSizeError):
        dim_bruteforce(fig15, max_cells=3)
    with pytest.raises(ValueError):
        dim_bruteforce(fig15, method="qr")


def test_polynomials_are_in_the_nullspace(fig15):
    p = from_polynomial(fig15, {(0, 0): 1.0, (1, 1): -0.5, (2, 2): 0.25, (2, 0): 1.0})
    assert constraint_residual(fig15, p.nets, hbc=False) < 1e-12
    # but violate the boundary conditions
    assert constraint_residual(fig15, p.nets, hbc=True) > 1e-3


def test_nullspace_dimension(fig5):
    N, order = nullspace(fig5, hbc=True)
    assert N.shape == (9 * len(order), dim_bruteforce(fig5, True))
    A, _ = constraint_matrix(fig5, True)
    assert np.abs(A @ N).max() < 1e-9


def test_random_generator_validates():
    with pytest.raises(ValueError):
        random_hierarchical_mesh(-1)
    with pytest.raises(ValueError):
        random_hierarchical_mesh(1, split_prob=2.0)


@pytest.mark.parametrize("knots", [[0, 1], [0, 1, 2, 3], [0, 0.5, 2, 2.25, 7]])
def test_univariate_oracle(knots):
    assert dim_univariate_bruteforce(knots) == len(knots) + 1


@given(seed=st.integers(0, 100_000), hbc=st.booleans())
def test_nullity_invariant_under_simplify(seed, hbc):
    m = random_hierarchical_mesh(seed, 4, 3, 0.5)
    assert dim_bruteforce(simplify(m), hbc) == dim_bruteforce(m, hbc)
