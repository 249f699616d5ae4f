import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvrspline import _fallback, kernels

ck = pytest.importorskip("cvrspline._ckernels")
P = 2147483629


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 12))
def test_rank_backends_agree(seed, nrows, ncols):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(nrows):
        cols = rng.choice(ncols, size=rng.integers(1, ncols + 1), replace=False)
        rows.append({int(c): int(rng.integers(0, 5)) for c in cols})
    a = _fallback.sparse_rank_mod([dict(r) for r in rows], ncols, P)
    b = ck.sparse_rank_mod([dict(r) for r in rows], ncols, P)
    assert a == b
    dense = np.zeros((nrows, ncols))
    for i, r in enumerate(rows):
        for c, v in r.items():
            dense[i, c] = v
    assert a == np.linalg.matrix_rank(dense)


def test_eval_backends_agree(rng):
    nets = rng.standard_normal((4, 3, 3))
    rects = np.array([[0, 1, 0, 1], [1, 2, 0, 1], [0, 1, 1, 2], [1, 2, 1, 2]], dtype=float)
    idx = rng.integers(0, 4, 200).astype(np.int64)
    x = rects[idx, 0] + rng.random(200)
    y = rects[idx, 2] + rng.random(200)
    assert np.allclose(_fallback.eval_patches(nets, rects, idx, x, y), ck.eval_patches(nets, rects, idx, x, y), atol=1e-13)
