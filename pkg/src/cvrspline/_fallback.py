"""Pure-Python/NumPy versions of the compiled kernels."""

from __future__ import annotations

import numpy as np


def sparse_rank_mod(rows: list[dict[int, int]], ncols: int, p: int) -> int:
    """Rank of a sparse matrix over GF(p) by incremental row reduction.

    Each row is reduced against the pivot rows found so far, always
    eliminating its smallest column first.  ``ncols`` is accepted for API
    symmetry with the compiled kernel.
    """
    pivots: dict[int, dict[int, int]] = {}
    for src in rows:
        d = {k: v % p for k, v in src.items() if v % p}
        while d:
            c = min(d)
            pr = pivots.get(c)
            if pr is None:
                inv = pow(d[c], -1, p)
                pivots[c] = {k: v * inv % p for k, v in d.items()}
                break
            f = d[c]
            for k, v in pr.items():
                nv = (d.get(k, 0) - f * v) % p
                if nv:
                    d[k] = nv
                else:
                    d.pop(k, None)
    return len(pivots)


def eval_patches(nets: np.ndarray, rects: np.ndarray, cell_idx: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate biquadratic patches: point ``i`` uses patch ``cell_idx[i]``.

    ``nets`` has shape (ncells, 3, 3) and ``rects`` (ncells, 4) with rows
    ``(x0, x1, y0, y1)``.  Negative indices give zero.
    """
    idx = np.asarray(cell_idx, dtype=np.int64)
    ok = idx >= 0
    out = np.zeros(len(idx))
    if not np.any(ok):
        return out
    r = rects[idx[ok]]
    u = (x[ok] - r[:, 0]) / (r[:, 1] - r[:, 0])
    v = (y[ok] - r[:, 2]) / (r[:, 3] - r[:, 2])
    bu = np.stack([(1 - u) ** 2, 2 * u * (1 - u), u * u], axis=1)
    bv = np.stack([(1 - v) ** 2, 2 * v * (1 - v), v * v], axis=1)
    out[ok] = np.einsum("pj,pjk,pk->p", bu, nets[idx[ok]], bv)
    return out

