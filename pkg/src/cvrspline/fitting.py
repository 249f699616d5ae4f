"""Adaptive fitting of an open surface with C1 biquadratic splines.

The data is either a triangulated surface (parametrized over the unit
square with mean-value weights) or an analytic function of the parameters.
Each iteration builds the basis of the current mesh, interpolates the data
at the domain centres of the CVR graph, measures the error per cell at the
data points, and subdivides the cells that miss the tolerance.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .basis import BasisCache, BasisSet, build_basis, evaluate_many
from .cvr import working_mesh
from .mesh import HierarchicalTMesh, locate_points, new_mesh

log = logging.getLogger(__name__)

DENSE_LIMIT = 5000


class UnsupportedSurface(ValueError):
    """Closed surfaces or surfaces with several boundary loops."""


class SingularSystem(ArithmeticError):
    """The collocation matrix is numerically singular."""


# ----------------------------------------------------------------- triangles
@dataclass
class TriMesh:
    """Triangulated surface: ``vertices`` (N, 3) and ``triangles`` (M, 3)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("vertices must be (N, d) and triangles (M, 3)")

    def boundary_loop(self) -> list[int]:
        """The single boundary loop, oriented like the triangles."""
        count: dict[tuple[int, int], int] = {}
        directed: dict[int, int] = {}
        for a, b, c in self.triangles.tolist():
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                count[key] = count.get(key, 0) + 1
        for a, b, c in self.triangles.tolist():
            for u, v in ((a, b), (b, c), (c, a)):
                n = count[(min(u, v), max(u, v))]
                if n > 2:
                    raise UnsupportedSurface(f"non-manifold edge ({u}, {v})")
                if n == 1:
                    if u in directed:
                        raise UnsupportedSurface(f"boundary vertex {u} is not manifold")
                    directed[u] = v
        if not directed:
            raise UnsupportedSurface("closed surface (no boundary)")
        start = min(directed)
        loop = [start]
        while True:
            nxt = directed[loop[-1]]
            if nxt == start:
                break
            loop.append(nxt)
            if len(loop) > len(directed):
                raise UnsupportedSurface("broken boundary")
        if len(loop) != len(directed):
            raise UnsupportedSurface("several boundary loops")
        return loop

    @classmethod
    def grid(cls, f: Callable, n: int = 100) -> "TriMesh":
        """Graph ``(x, y, f(x, y))`` of a function over an ``n x n`` vertex grid."""
        g = np.linspace(0.0, 1.0, n)
        X, Y = np.meshgrid(g, g, indexing="xy")
        V = np.column_stack([X.ravel(), Y.ravel(), np.asarray(f(X.ravel(), Y.ravel()), dtype=float)])
        tris = []
        for j in range(n - 1):
            for i in range(n - 1):
                a = j * n + i
                tris.append((a, a + 1, a + n + 1))
                tris.append((a, a + n + 1, a + n))
        return cls(V, np.array(tris))


def read_obj(path: str | Path) -> TriMesh:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                tris.append((idx[0], idx[k], idx[k + 1]))
    if not verts or not tris:
        raise ValueError(f"{path}: no triangles found")
    return TriMesh(np.array(verts), np.array(tris))


def write_obj(path: str | Path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in np.asarray(vertices)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(triangles)]
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------- parametrization
def _pick_corners(P: np.ndarray, s: np.ndarray) -> list[int]:
    """Four loop positions to pin to the square's corners.

    The four sharpest turns of the loop are used when they are spread out
    (consecutive picks at least an eighth of the loop length apart);
    otherwise the positions closest to the quarter marks of arc length.
    """
    n = len(P)
    prev = P - np.roll(P, 1, axis=0)
    nxt = np.roll(P, -1, axis=0) - P
    cosang = np.einsum("ij,ij->i", prev, nxt) / np.maximum(
        np.linalg.norm(prev, axis=1) * np.linalg.norm(nxt, axis=1), 1e-300
    )
    turn = np.arccos(np.clip(cosang, -1.0, 1.0))
    cand = sorted(np.argsort(-turn, kind="stable")[:4].tolist())
    gaps = np.diff(np.concatenate([s[cand], [s[cand[0]] + 1.0]]))
    if n >= 4 and np.all(turn[cand] > np.pi / 8) and np.all(gaps >= 0.125):
        return cand
    base = []
    for q in (0.0, 0.25, 0.5, 0.75):
        c = int(np.argmin(np.abs(s - q)))
        if base and c <= base[-1]:
            c = base[-1] + 1
        base.append(c)
    if base[-1] >= n:
        raise UnsupportedSurface("boundary loop too short for a square")
    return base


def _square_boundary(V: np.ndarray, loop: list[int]) -> tuple[list[int], np.ndarray]:
    """Chord-length placement of the loop on the unit square's border.

    Four loop vertices become the corners (see :func:`_pick_corners`); the
    one nearest the lower-left of the data's xy bounding box goes to
    ``(0, 0)``.  Vertices between two corners are spread by chord length.
    """
    P = V[loop]
    seg = np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / seg.sum()
    corners = _pick_corners(P, s)
    lo = P[:, :2].min(axis=0)
    first = min(range(4), key=lambda k: np.linalg.norm(P[corners[k], :2] - lo))
    shift = corners[first]
    loop = loop[shift:] + loop[:shift]
    corners = sorted((c - shift) % len(loop) for c in corners) + [len(loop)]
    P = V[loop]
    seg = np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    uv = np.zeros((len(loop), 2))
    for side in range(4):
        a, b = corners[side], corners[side + 1]
        t = (cum[a:b] - cum[a]) / (cum[b] - cum[a])
        uv[a:b] = square[side] + t[:, None] * (square[side + 1] - square[side])
    return loop, uv


def mean_value_weights(V: np.ndarray, triangles: np.ndarray) -> scipy.sparse.csr_matrix:
    """Sparse matrix of mean-value weights ``w_ij`` (rows not normalized)."""
    rows, cols, vals = [], [], []
    for tri in triangles:
        for k in range(3):
            i, j, l = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            e1 = V[j] - V[i]
            e2 = V[l] - V[i]
            n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
            cosa = np.clip(np.dot(e1, e2) / (n1 * n2), -1.0, 1.0)
            t = np.tan(0.5 * np.arccos(cosa))
            # the angle at i between edges (i,j) and (i,l) contributes to both
            rows += [i, i]
            cols += [j, l]
            vals += [t / n1, t / n2]
    n = len(V)
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def parametrize(tri: TriMesh) -> np.ndarray:
    """Parameters in ``[0, 1]^2`` for every vertex (mean-value weights).

    The boundary goes to the square's border by chord length; the interior
    solves the convex-combination system.  Raises if any parameter triangle
    comes out with non-positive signed area.
    """
    V = tri.vertices
    loop = tri.boundary_loop()
    loop, uv_b = _square_boundary(V, loop)
    n = len(V)
    uv = np.zeros((n, 2))
    is_b = np.zeros(n, dtype=bool)
    is_b[loop] = True
    uv[loop] = uv_b
    W = mean_value_weights(V, tri.triangles)
    inner = np.flatnonzero(~is_b)
    if inner.size:
        d = np.asarray(W.sum(axis=1)).ravel()
        L = scipy.sparse.diags(d) - W
        A = L[inner][:, inner].tocsc()
        B = -L[inner][:, np.flatnonzero(is_b)] @ uv[is_b]
        uv[inner] = scipy.sparse.linalg.spsolve(A, B).reshape(-1, 2)
    areas = signed_areas(uv, tri.triangles)
    orient = np.sign(np.sum(areas))
    if orient < 0:  # loop ran clockwise in the data: mirror
        uv[:, 1] = 1.0 - uv[:, 1]
        areas = -areas
    if np.any(areas <= 0):
        raise UnsupportedSurface(f"{int(np.sum(areas <= 0))} flipped parameter triangles")
    return uv


def signed_areas(uv: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = uv[triangles[:, 0]], uv[triangles[:, 1]], uv[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


# ----------------------------------------------------------------- data
class TriangleLocator:
    """Bucketed point location in a planar triangulation with nearest snap."""

    def __init__(self, uv: np.ndarray, triangles: np.ndarray, nbuckets: int | None = None) -> None:
        self.uv = uv
        self.tris = triangles
        m = len(triangles)
        self.nb = nbuckets or max(1, int(np.sqrt(m / 2)))
        P = uv[triangles]
        self.lo = uv.min(axis=0)
        self.size = np.maximum(uv.max(axis=0) - self.lo, 1e-300)
        bmin = self._bucket(P.min(axis=1))
        bmax = self._bucket(P.max(axis=1))
        self.buckets: dict[tuple[int, int], list[int]] = {}
        for t in range(m):
            for i in range(bmin[t, 0], bmax[t, 0] + 1):
                for j in range(bmin[t, 1], bmax[t, 1] + 1):
                    self.buckets.setdefault((i, j), []).append(t)

    def _bucket(self, p: np.ndarray) -> np.ndarray:
        return np.clip(((p - self.lo) / self.size * self.nb).astype(int), 0, self.nb - 1)

    def barycentric(self, t: int, p: np.ndarray) -> np.ndarray:
        a, b, c = self.uv[self.tris[t]]
        T = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        l1, l2 = np.linalg.solve(T, p - a)
        return np.array([1.0 - l1 - l2, l1, l2])

    def locate(self, p) -> tuple[int, np.ndarray]:
        """Triangle and barycentric weights for ``p``.

        Points outside every triangle snap to the closest point of the
        nearest triangle (the weights are then those of that closest point).
        """
        p = np.asarray(p, dtype=float)
        key = tuple(self._bucket(p[None, :])[0])
        for t in self.buckets.get(key, []):
            w = self.barycentric(t, p)
            if w.min() >= -1e-12:
                return t, np.clip(w, 0.0, None) / np.clip(w, 0.0, None).sum()
        return self._nearest(p)

    def _nearest(self, p: np.ndarray) -> tuple[int, np.ndarray]:
        best = (np.inf, -1, None)
        for t in range(len(self.tris)):
            q, w = _closest_on_triangle(self.uv[self.tris[t]], p)
            d = float(np.sum((q - p) ** 2))
            if d < best[0]:
                best = (d, t, w)
        return best[1], best[2]


def _closest_on_triangle(abc: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest point of a triangle to ``p`` and its barycentric weights."""
    a, b, c = abc
    best = None
    # interior candidate
    T = np.array([b - a, c - a]).T
    try:
        l1, l2 = np.linalg.solve(T, p - a)
        if l1 >= 0 and l2 >= 0 and l1 + l2 <= 1:
            return p.copy(), np.array([1 - l1 - l2, l1, l2])
    except np.linalg.LinAlgError:
        pass
    for (i, u), (j, v) in (((0, a), (1, b)), ((1, b), (2, c)), ((2, c), (0, a))):
        e = v - u
        s = float(np.clip(np.dot(p - u, e) / max(np.dot(e, e), 1e-300), 0.0, 1.0))
        q = u + s * e
        d = float(np.sum((q - p) ** 2))
        if best is None or d < best[0]:
            w = np.zeros(3)
            w[i] += 1 - s
            w[j] += s
            best = (d, q, w)
    return best[1], best[2]


class TriangulationData:
    """Data given by a parametrized triangulation (barycentric interpolation)."""

    def __init__(self, tri: TriMesh, uv: np.ndarray | None = None) -> None:
        self.tri = tri
        self.uv = parametrize(tri) if uv is None else np.asarray(uv, dtype=float)
        self.locator = TriangleLocator(self.uv, tri.triangles)
        self.snapped = 0

    @property
    def points(self) -> np.ndarray:
        return self.uv

    @property
    def values(self) -> np.ndarray:
        return self.tri.vertices

    def at(self, params: np.ndarray) -> np.ndarray:
        out = np.zeros((len(params), self.tri.vertices.shape[1]))
        self.snapped = 0
        for k, p in enumerate(params):
            t, w = self.locator.locate(p)
            if not (0.0 <= p[0] <= 1.0 and 0.0 <= p[1] <= 1.0):
                self.snapped += 1
            out[k] = w @ self.tri.vertices[self.tri.triangles[t]]
        return out


class FunctionData:
    """Data given by a function of the parameters, checked at sample points."""

    def __init__(self, f: Callable, points: np.ndarray) -> None:
        self.f = f
        self.points = np.asarray(points, dtype=float)
        self.values = self.at(self.points)

    def at(self, params: np.ndarray) -> np.ndarray:
        v = np.asarray(self.f(params[:, 0], params[:, 1]), dtype=float)
        return v.reshape(len(params), -1)


def grid_points(n: int = 100) -> np.ndarray:
    g = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(g, g)
    return np.column_stack([X.ravel(), Y.ravel()])


def franke(x, y):
    """Franke's test function on the unit square."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (
        0.75 * np.exp(-((9 * x - 2) ** 2) / 4 - ((9 * y - 2) ** 2) / 4)
        + 0.75 * np.exp(-((9 * x + 1) ** 2) / 49 - (9 * y + 1) / 10)
        + 0.5 * np.exp(-((9 * x - 7) ** 2) / 4 - ((9 * y - 3) ** 2) / 4)
        - 0.2 * np.exp(-((9 * x - 4) ** 2) - (9 * y - 7) ** 2)
    )


# ----------------------------------------------------------------- model
@dataclass
class IterationRecord:
    iteration: int
    n: int  # cells of the mesh
    dim: int
    max_error: float
    seconds: float
    refined: int
    level: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FitModel:
    mesh: HierarchicalTMesh
    basis: BasisSet
    control_points: np.ndarray
    cell_error: dict[str, float] = field(default_factory=dict)
    log: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    warnings: list[str] = field(default_factory=list)

    def __call__(self, x, y) -> np.ndarray:
        return self.basis.evaluate(x, y) @ self.control_points

    def report(self) -> dict:
        return {
            "converged": self.converged,
            "warnings": list(self.warnings),
            "iterations": [r.to_dict() for r in self.log],
            "final": {"cells": len(self.mesh.cells), "dim": len(self.basis), "max_level": self.mesh.summary()["max_level"]},
        }


def solve_collocation(C: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Square solve: dense LU up to ``DENSE_LIMIT``, sparse GMRES beyond."""
    n = C.shape[0]
    if C.shape != (n, n):
        raise SingularSystem(f"collocation matrix is {C.shape}, not square")
    if n <= DENSE_LIMIT:
        try:
            lu = scipy.linalg.lu_factor(C, check_finite=True)
        except (ValueError, scipy.linalg.LinAlgError) as exc:
            raise SingularSystem(str(exc)) from exc
        if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(lu[0])):
            raise SingularSystem("collocation matrix is numerically singular")
        return scipy.linalg.lu_solve(lu, rhs)
    S = scipy.sparse.csr_matrix(C)
    out = np.zeros_like(rhs)
    for k in range(rhs.shape[1]):
        x, info = scipy.sparse.linalg.gmres(S, rhs[:, k], rtol=1e-12, atol=0.0, maxiter=10 * n)
        if info != 0:
            raise SingularSystem(f"GMRES did not converge (info={info})")
        out[:, k] = x
    return out


def collocate_and_solve(basis: BasisSet, data) -> tuple[np.ndarray, np.ndarray]:
    """Control points from interpolation at the domain centres.

    Returns ``(control_points, collocation_matrix)``.
    """
    C = basis.collocation_matrix()
    rhs = data.at(basis.collocation_points())
    return solve_collocation(C, rhs), C


def cell_errors(model_mesh: HierarchicalTMesh, basis: BasisSet, P: np.ndarray, data) -> tuple[dict[str, float], float]:
    pts = data.points
    S = evaluate_many(model_mesh, basis.splines, pts[:, 0], pts[:, 1]) @ P
    err = np.linalg.norm(S - data.values, axis=1)
    idx = locate_points(model_mesh, pts[:, 0], pts[:, 1])
    order = [c.id for c in model_mesh.sorted_cells()]
    out: dict[str, float] = {}
    for i, e in zip(idx, err):
        if i >= 0:
            cid = order[i]
            out[cid] = max(out.get(cid, 0.0), float(e))
    return out, float(err.max(initial=0.0))


def _ring(mesh: HierarchicalTMesh, cids) -> set[str]:
    """Cells sharing an edge or a corner with any of ``cids``, no finer than them."""
    out = set()
    for cid in cids:
        lev = mesh.cells[cid].level
        near = set(mesh.neighbours(cid))
        for v in mesh.cells[cid].corners:
            near.update(mesh.cells_at_vertex.get(v, ()))
        out.update(n for n in near if mesh.cells[n].level <= lev)
    return out


def refine_effectively(
    mesh: HierarchicalTMesh, cells, max_level: int = 12, grow: int = 2
) -> HierarchicalTMesh:
    """Subdivide ``cells`` so that each split actually enlarges the space.

    Splitting an isolated cell only creates removable edges: simplification
    takes them out again and the fit near that cell cannot improve.  Such
    cells are detected by checking whether they survive as single cells of
    the simplified working mesh; for those the marked set is widened by
    their neighbours of equal or coarser level, at most ``grow`` times.
    """
    marked = set(cells)
    pending = set(cells)
    new = mesh.subdivide_many(sorted(marked))
    for _ in range(grow):
        work = working_mesh(new, hbc=False)
        leaves = {work.real_rect(c) for c in work.cells}
        stuck = {c for c in pending if mesh.real_rect(c) in leaves}
        if not stuck:
            break
        extra = {c for c in _ring(mesh, stuck) if mesh.cells[c].level < max_level} - marked
        if not extra:
            break
        log.info("%d marked cells add no functions; also splitting %d neighbours", len(stuck), len(extra))
        marked |= extra
        pending = stuck
        new = mesh.subdivide_many(sorted(marked))
    return new


def fit_adaptive(
    data,
    tol: float = 1e-3,
    max_iter: int = 8,
    level0: tuple[int, int] = (4, 4),
    mesh: HierarchicalTMesh | None = None,
    max_level: int = 12,
) -> FitModel:
    """Refine until every cell's error is below ``tol`` or ``max_iter`` runs out."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(data, TriMesh):
        data = TriangulationData(data)
    if mesh is None:
        mesh = new_mesh(np.linspace(0, 1, level0[0] + 1), np.linspace(0, 1, level0[1] + 1))
    history: list[IterationRecord] = []
    warnings: list[str] = []
    model = None
    cache = BasisCache()
    for it in range(1, max_iter + 1):
        t0 = time.perf_counter()
        basis = build_basis(mesh, hbc=False, cache=cache)
        P, _ = collocate_and_solve(basis, data)
        errs, emax = cell_errors(mesh, basis, P, data)
        bad = sorted(cid for cid, e in errs.items() if e > tol and mesh.cells[cid].level < max_level)
        rec = IterationRecord(it, len(mesh.cells), len(basis), emax, 0.0, len(bad), mesh.summary()["max_level"])
        model = FitModel(mesh, basis, P, errs, history, False, warnings)
        history.append(rec)
        log.info("iteration %d: cells=%d dim=%d max_error=%.3e refine=%d", it, rec.n, rec.dim, emax, len(bad))
        if emax <= tol:
            rec.seconds = time.perf_counter() - t0
            model.converged = True
            break
        if len(history) >= 4 and all(history[-k].max_error >= history[-k - 1].max_error for k in (1, 2, 3)):
            msg = f"error did not decrease over 3 iterations (iteration {it})"
            if msg not in warnings:
                warnings.append(msg)
                log.warning(msg)
        if not bad:
            rec.seconds = time.perf_counter() - t0
            warnings.append("cells over tolerance are already at the maximum level")
            break
        if it < max_iter:
            mesh = refine_effectively(mesh, bad, max_level)
        rec.seconds = time.perf_counter() - t0
    return model


def sample_surface(model: FitModel, res: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """``res x res`` evaluation over the unit square as (vertices, triangles)."""
    m = model.mesh
    gx = np.linspace(m.x_knots[0], m.x_knots[-1], res)
    gy = np.linspace(m.y_knots[0], m.y_knots[-1], res)
    X, Y = np.meshgrid(gx, gy)
    V = model(X.ravel(), Y.ravel())
    tris = []
    for j in range(res - 1):
        for i in range(res - 1):
            a = j * res + i
            tris += [(a, a + 1, a + res + 1), (a, a + res + 1, a + res)]
    return V, np.array(tris, dtype=np.int64).reshape(-1, 3)
