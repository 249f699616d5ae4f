"""Brute-force dimension of the C1 biquadratic spline space on a T-mesh.

The space is written as the nullspace of a linear system on the 9 B-ordinates
of every cell.  Continuity across each shared edge segment is imposed by
matching value and normal derivative at three points of the segment, which
pins down two quadratics in the running variable.  The assembly evaluates
Bernstein polynomials directly, in exact rational arithmetic, and shares no
code with the B-net machinery used by the basis construction.

The rank is computed exactly by sparse elimination modulo two large primes
(a float SVD is available as a cross-check and for nullspace bases).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .mesh import EAST, NORTH, SCALE, SIDES, SOUTH, WEST, HierarchicalTMesh, random_mesh
from .kernels import sparse_rank_mod

PRIMES = (2147483629, 2147483587)
MAX_CELLS = 2000


class OracleSizeError(MemoryError):
    """The mesh has more leaf cells than the oracle is configured for."""


class _Field:
    """Scalar arithmetic used by the assembly: floats or integers mod ``p``."""

    def __init__(self, p: int | None = None) -> None:
        self.p = p

    def coord(self, knots, first: int, t: int):
        seg, rem = divmod(t, SCALE)
        k = seg - first
        if self.p is None:
            a = float(knots[k])
            return a if rem == 0 else a + (float(knots[k + 1]) - a) * (rem / SCALE)
        a = self.lift(Fraction(float(knots[k])))
        if rem == 0:
            return a
        b = self.lift(Fraction(float(knots[k + 1])))
        return (a + (b - a) * rem * pow(SCALE, -1, self.p)) % self.p

    def lift(self, q: Fraction) -> int:
        return q.numerator * pow(q.denominator, -1, self.p) % self.p

    def div(self, a, b):
        if self.p is None:
            return a / b
        return a * pow(b % self.p, -1, self.p) % self.p

    def half(self, a):
        return self.div(a, 2)

    def reduce(self, a):
        return a if self.p is None else a % self.p


def _side_rows(F: _Field, rect, side: str, pts) -> list[tuple[list, list]]:
    """(value row, scaled normal-derivative row) at each point on a side.

    Rows are length-9 lists over the ordinates ``b[j, k]`` (index 3j+k).  The
    derivative rows are multiplied by the cell width normal to the side.
    """
    x0, x1, y0, y1 = rect
    out = []
    for q in pts:
        if side in (WEST, EAST):
            u = 0 if side == WEST else 1
            v = F.div(q - y0, y1 - y0)
        else:
            u = F.div(q - x0, x1 - x0)
            v = 0 if side == SOUTH else 1
        bu = ((1 - u) ** 2, 2 * u * (1 - u), u * u)
        bv = ((1 - v) ** 2, 2 * v * (1 - v), v * v)
        dbu = (-2 * (1 - u), 2 - 4 * u, 2 * u)
        dbv = (-2 * (1 - v), 2 - 4 * v, 2 * v)
        val = [bu[j] * bv[k] for j in range(3) for k in range(3)]
        if side in (WEST, EAST):
            der = [dbu[j] * bv[k] for j in range(3) for k in range(3)]
        else:
            der = [bu[j] * dbv[k] for j in range(3) for k in range(3)]
        out.append((val, der))
    return out


def _assemble(mesh: HierarchicalTMesh, hbc: bool, F: _Field) -> tuple[list[dict[int, object]], list[str]]:
    order = [c.id for c in mesh.sorted_cells()]
    col = {cid: 9 * i for i, cid in enumerate(order)}
    xc = lambda t: F.coord(mesh.x_knots, mesh.x_first, t)  # noqa: E731
    yc = lambda t: F.coord(mesh.y_knots, mesh.y_first, t)  # noqa: E731
    rects = {}
    for cid in order:
        c = mesh.cells[cid]
        rects[cid] = (xc(c.x0), xc(c.x1), yc(c.y0), yc(c.y1))
    rows: list[dict[int, object]] = []

    def emit(parts):
        d: dict[int, object] = {}
        for base, coeffs, sign in parts:
            for k, v in enumerate(coeffs):
                d[base + k] = d.get(base + k, 0) + sign * v
        d = {k: r for k, v in d.items() if (r := F.reduce(v))}
        if d:
            rows.append(d)

    for cid in order:
        ra = rects[cid]
        bnd = mesh.on_boundary(cid)
        for side in SIDES:
            if hbc and bnd[side]:
                lo, hi = (ra[2], ra[3]) if side in (WEST, EAST) else (ra[0], ra[1])
                pts = (lo, F.half(lo + hi), hi)
                for val, der in _side_rows(F, ra, side, pts):
                    emit([(col[cid], val, 1)])
                    emit([(col[cid], der, 1)])
            if side not in (EAST, NORTH):
                continue  # each contact once
            for ct in mesh.contacts[cid][side]:
                nb = ct.neighbour
                rb = rects[nb]
                if side == EAST:
                    lo, hi = yc(ct.lo), yc(ct.hi)
                    wa, wb = ra[1] - ra[0], rb[1] - rb[0]
                    other = WEST
                else:
                    lo, hi = xc(ct.lo), xc(ct.hi)
                    wa, wb = ra[3] - ra[2], rb[3] - rb[2]
                    other = SOUTH
                pts = (lo, F.half(lo + hi), hi)
                for (va, da), (vb, db) in zip(_side_rows(F, ra, side, pts), _side_rows(F, rb, other, pts)):
                    emit([(col[cid], va, 1), (col[nb], vb, -1)])
                    # da / wa == db / wb, cleared of denominators
                    emit([(col[cid], [wb * v for v in da], 1), (col[nb], [wa * v for v in db], -1)])
    return rows, order


def constraint_matrix(mesh: HierarchicalTMesh, hbc: bool = True) -> tuple[np.ndarray, list[str]]:
    """Dense float constraint matrix with normalized rows, and the cell order.

    Column ``9*i + 3*j + k`` holds ordinate ``b[j, k]`` of cell ``order[i]``.
    With ``hbc`` the value and normal derivative vanish on the boundary.
    """
    rows, order = _assemble(mesh, hbc, _Field())
    A = np.zeros((len(rows), 9 * len(order)))
    for i, d in enumerate(rows):
        for k, v in d.items():
            A[i, k] = v
    if len(rows):
        A /= np.linalg.norm(A, axis=1, keepdims=True)
    return A, order


def exact_rank(mesh: HierarchicalTMesh, hbc: bool = True) -> tuple[int, int]:
    """``(rank, ncols)`` of the rational constraint system.

    Knots are taken as the exact binary values of the given floats.  The rank
    is the larger of the ranks modulo two primes: a modular rank never
    exceeds the rational one and equals it unless the prime divides some
    nonzero minor, so a miss on both primes is very unlikely.
    """
    best = 0
    ncols = 9 * len(mesh.cells)
    for p in PRIMES:
        rows, _ = _assemble(mesh, hbc, _Field(p))
        best = max(best, sparse_rank_mod(rows, ncols, p))
    return best, ncols


def numeric_rank(A: np.ndarray, rtol: float = 1e-8) -> int:
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def dim_bruteforce(
    mesh: HierarchicalTMesh, hbc: bool = True, method: str = "exact", max_cells: int = MAX_CELLS
) -> int:
    """Dimension of the spline space on ``mesh``.

    With ``hbc`` the space carries homogeneous boundary conditions on the
    mesh boundary; without it the plain C1 space is computed directly on the
    mesh (no extension is involved).  ``method`` is ``"exact"`` (modular
    rank of the rational system) or ``"svd"`` (numerical rank, threshold
    ``1e-8`` times the largest singular value).  Every float knot is a
    dyadic rational, so the exact route always applies.
    """
    if len(mesh.cells) > max_cells:
        raise OracleSizeError(f"{len(mesh.cells)} cells exceed the oracle bound {max_cells}")
    if method == "exact":
        rank, ncols = exact_rank(mesh, hbc)
        return ncols - rank
    if method == "svd":
        A, order = constraint_matrix(mesh, hbc)
        return 9 * len(order) - numeric_rank(A)
    raise ValueError(f"unknown method {method!r}")


def nullspace(mesh: HierarchicalTMesh, hbc: bool = True, rtol: float = 1e-8) -> tuple[np.ndarray, list[str]]:
    """Orthonormal nullspace basis (columns) of the constraint matrix."""
    A, order = constraint_matrix(mesh, hbc)
    if A.shape[0] == 0:
        return np.eye(A.shape[1]), order
    _, s, vt = np.linalg.svd(A)
    r = int(np.sum(s > rtol * s[0]))
    return vt[r:].T, order


def constraint_residual(mesh: HierarchicalTMesh, nets: dict[str, np.ndarray], hbc: bool = True) -> float:
    """Largest violation of the (row-normalized) constraints by a B-net,
    relative to the largest ordinate."""
    A, order = constraint_matrix(mesh, hbc)
    vec = np.concatenate([np.asarray(nets.get(cid, np.zeros((3, 3))), float).ravel() for cid in order])
    scale = max(1.0, float(np.max(np.abs(vec))) if vec.size else 1.0)
    if A.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(A @ vec))) / scale


def dim_univariate_bruteforce(knots) -> int:
    """Dimension of C1 quadratic splines on a 1D knot vector (no end conditions)."""
    t = [Fraction(float(v)) for v in knots]
    n = len(t) - 1
    best = 0
    for p in PRIMES:
        F = _Field(p)
        rows: list[dict[int, int]] = []
        for i in range(1, n):
            h0, h1 = F.lift(t[i] - t[i - 1]), F.lift(t[i + 1] - t[i])
            rows.append({3 * (i - 1) + 2: 1, 3 * i: p - 1})
            # 2(b2 - b1)/h0 == 2(b1' - b0')/h1, cleared of denominators
            rows.append({3 * (i - 1) + 1: (-h1) % p, 3 * (i - 1) + 2: h1, 3 * i: h0, 3 * i + 1: (-h0) % p})
        best = max(best, sparse_rank_mod(rows, 3 * n, p))
    return 3 * n - best


def random_hierarchical_mesh(
    seed: int, level0_max: int = 5, max_level: int = 3, split_prob: float = 0.4
) -> HierarchicalTMesh:
    """Reproducible random mesh for property and acceptance suites.

    The level-0 grid has between 2 and ``level0_max`` integer intervals per
    direction; then, level by level, every leaf of the current level is
    split with probability ``split_prob``.
    """
    if seed < 0 or level0_max < 1 or max_level < 0 or not 0 <= split_prob <= 1:
        raise ValueError("invalid random mesh parameters")
    rng = np.random.default_rng(seed)
    return random_mesh(rng, (min(2, level0_max), level0_max), max_level, split_prob)
