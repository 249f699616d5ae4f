"""Basis of the biquadratic C1 spline space from the CVR basis.

Each basis function is the spline whose phi-image is the indicator of one
g-cell.  It is built in three stages on a local support domain ``E``:

1. T-connections, lowest level first, are processed along their ordered
   T-structure branches (end-point bilinears, then sub-cell rows).
2. A sweep repeats vertex bilinears and edge propagation until nothing new
   follows.
3. Whatever is still unknown comes from a small least-squares solve of the
   C1 and phi conditions on ``E``, with a residual gate.  If the residual
   shows that ``E`` is too small, ``E`` grows by one ring and the build
   restarts (with a warning).

The number of ordinates produced by each stage is reported in
``BasisFunction.stats``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bnet import BNetSpline, c1_pair_operator, check_c1, patch_arrays, reexpress, reexpress_operator
from .cvr import CvrGraph, GCell, build_cvr, working_mesh
from .kernels import eval_patches
from .mesh import SIDES, HierarchicalTMesh, locate_points
from .tstructure import (
    PropagationConflict,
    PropagationState,
    TStructure,
    branch_for,
    branch_bordinates,
    find_t_structures,
    init_state,
    split_components,
    sweep,
)

log = logging.getLogger(__name__)


class PhiError(ValueError):
    """The input is not a spline of the space (one-neighbour values disagree)."""


class ConstructionError(RuntimeError):
    """The local system is inconsistent even on the whole mesh."""


@dataclass
class BasisFunction:
    gcell: str
    spline: BNetSpline
    work_spline: BNetSpline
    support_domain: set[str]
    stats: dict[str, int] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)


@dataclass
class BasisSet:
    """Basis functions indexed like ``cvr.gcells``.

    ``mesh`` is the mesh the user passed; every spline lives on it.  The
    construction itself ran on ``work_mesh`` (simplified, and extended when
    ``hbc`` is false).
    """

    mesh: HierarchicalTMesh
    work_mesh: HierarchicalTMesh
    cvr: CvrGraph
    functions: list[BasisFunction]
    hbc: bool

    def __len__(self) -> int:
        return len(self.functions)

    @property
    def splines(self) -> list[BNetSpline]:
        return [bf.spline for bf in self.functions]

    def centres(self) -> np.ndarray:
        return np.array([g.centre for g in self.cvr.gcells], dtype=float).reshape(-1, 2)

    def evaluate(self, x, y) -> np.ndarray:
        """Matrix of all basis functions at points of the mesh (npoints x nbasis)."""
        return evaluate_many(self.mesh, self.splines, x, y)

    def collocation_points(self) -> np.ndarray:
        """Domain centres moved onto the closed domain of ``mesh``.

        With ``hbc=False`` the centres of g-cells in the extension collar lie
        outside the domain; they are replaced by their nearest point on the
        boundary.  The collar holds a single layer of g-cells, so distinct
        centres stay distinct (on a tensor mesh the points are the cell
        midpoints plus the end knots in each direction).
        """
        c = self.centres()
        m = self.mesh
        x = np.clip(c[:, 0], m.x_knots[0], m.x_knots[-1])
        y = np.clip(c[:, 1], m.y_knots[0], m.y_knots[-1])
        return np.column_stack([x, y])

    def collocation_matrix(self) -> np.ndarray:
        """Basis functions at :meth:`collocation_points` (square, dim x dim)."""
        c = self.collocation_points()
        return self.evaluate(c[:, 0], c[:, 1])


def evaluate_many(mesh: HierarchicalTMesh, splines: list[BNetSpline], x, y) -> np.ndarray:
    """Values of several splines on one mesh at the points (npoints x nsplines)."""
    x = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)))
    y = np.ascontiguousarray(np.atleast_1d(np.asarray(y, dtype=float)))
    order, rects = patch_arrays(mesh)
    pos = {cid: i for i, cid in enumerate(order)}
    idx = locate_points(mesh, x, y)
    out = np.zeros((len(x), len(splines)))
    for j, sp in enumerate(splines):
        rows = [pos[c] for c in sp.nets]
        sel = np.flatnonzero(np.isin(idx, rows))
        if sel.size == 0:
            continue
        nets = np.zeros((len(order), 3, 3))
        for cid, b in sp.nets.items():
            nets[pos[cid]] = b
        out[sel, j] = eval_patches(nets, rects, idx[sel], x[sel], y[sel])
    return out


# --------------------------------------------------------------- weights / E
def init_weights(cvr: CvrGraph, gcell_id: str) -> dict[str, float]:
    """Weight 1 on the chosen g-cell's domain centre and 0 on all others."""
    ids = [g.id for g in cvr.gcells]
    if gcell_id not in ids:
        raise KeyError(f"unknown g-cell {gcell_id!r}")
    return {g: (1.0 if g == gcell_id else 0.0) for g in ids}


def _units(mesh: HierarchicalTMesh, cvr: CvrGraph) -> list[tuple[str, frozenset[str]]]:
    """P-cells, T-connections, and single cells of the outer face."""
    cached = getattr(cvr, "_units", None)
    if cached is not None:
        return cached
    units = [(g.id, frozenset(g.cells)) for g in cvr.gcells]
    used = {c for _, u in units for c in u}
    units += [(f"O:{cid}", frozenset([cid])) for cid in sorted(mesh.cells) if cid not in used]
    cvr._units = units
    return units


def _unit_rect(mesh, cells):
    cs = [mesh.cells[c] for c in cells]
    return (min(c.x0 for c in cs), max(c.x1 for c in cs), min(c.y0 for c in cs), max(c.y1 for c in cs))


def _touch(r, s) -> bool:
    return r[0] <= s[1] and s[0] <= r[1] and r[2] <= s[3] and s[2] <= r[3]


def support_domain(mesh: HierarchicalTMesh, cvr: CvrGraph, gcell_id: str, rings: int = 2) -> tuple[set[str], list[set[str]]]:
    """Cells of ``E``: ``rings`` layers of units around the basis domain.

    A unit joins a ring when its covering rectangle touches (covers, is
    covered by, or is adjacent to) the covering rectangle of a unit already
    in ``E``.  Returns ``E`` and the per-ring unit-id sets.
    """
    units = _units(mesh, cvr)
    ids = [u for u, _ in units]
    R = getattr(cvr, "_unit_rects", None)
    if R is None:
        R = cvr._unit_rects = np.array([_unit_rect(mesh, cells) for _, cells in units], dtype=np.int64)
    try:
        start = ids.index(gcell_id)
    except ValueError:
        raise KeyError(gcell_id) from None
    chosen = np.zeros(len(units), dtype=bool)
    chosen[start] = True
    layers = [{gcell_id}]
    for _ in range(rings):
        C = R[chosen]
        touch = (
            (R[:, None, 0] <= C[None, :, 1])
            & (C[None, :, 0] <= R[:, None, 1])
            & (R[:, None, 2] <= C[None, :, 3])
            & (C[None, :, 2] <= R[:, None, 3])
        ).any(axis=1) & ~chosen
        if not touch.any():
            break
        chosen |= touch
        layers.append({ids[i] for i in np.flatnonzero(touch)})
    cells = set().union(*(units[i][1] for i in np.flatnonzero(chosen)))
    return cells, layers


# ------------------------------------------------------------------ phi rows
def tc_phi_operator(mesh: HierarchicalTMesh, g: GCell, cid: str) -> np.ndarray:
    """Row (length 9) giving phi of a T-connection from one-neighbour ``cid``."""
    trd = (mesh.x_real(g.rect[0]), mesh.x_real(g.rect[1]), mesh.y_real(g.rect[2]), mesh.y_real(g.rect[3]))
    return reexpress_operator(mesh.real_rect(cid), trd)[4]


def map_phi(spline: BNetSpline, cvr: CvrGraph, tol: float = 1e-9) -> dict[str, float]:
    """Phi-image of a spline on the CVR graph's mesh: g-cell id -> value."""
    mesh = cvr.mesh
    out = {}
    scale = max([1.0] + [float(np.max(np.abs(b))) for b in spline.nets.values()])
    for g in cvr.gcells:
        if g.kind == "P":
            out[g.id] = float(spline.net(g.cells[0])[1, 1])
            continue
        if not g.one_neighbours:
            raise PhiError(f"T-connection {g.id} has no one-neighbour cell")
        vals = [float(tc_phi_operator(mesh, g, c) @ spline.net(c).ravel()) for c in g.one_neighbours]
        if max(vals) - min(vals) > tol * scale:
            raise PhiError(f"one-neighbour values disagree on {g.id}: {vals}")
        out[g.id] = vals[0]
    return out


# -------------------------------------------------------------- completion
def _c1_blocks(mesh: HierarchicalTMesh, cid: str, side: str, ct) -> tuple[np.ndarray, np.ndarray]:
    cache = mesh.__dict__.setdefault("_c1_block_cache", {})
    key = (cid, side, ct.lo, ct.hi, ct.neighbour)
    ops = cache.get(key)
    if ops is None:
        ops = cache[key] = c1_pair_operator(mesh, cid, side, ct.lo, ct.hi, ct.neighbour)
    return ops


def _complete(state: PropagationState, tc_rows: list[tuple[GCell, str]]) -> tuple[int, float]:
    """Least-squares fill of the unknown ordinates; returns (count, residual).

    Every C1 row on ``E`` (zero outside) and every phi row is assembled.
    Rows whose ordinates are all known already are not part of the solve
    but their defect still counts towards the returned residual, so the
    residual certifies the whole local B-net.
    """
    mesh = state.mesh
    cells = sorted(state.support)
    pos = {cid: i for i, cid in enumerate(cells)}
    blocks = []  # (row block, rhs) over all 9*|E| columns
    for cid in cells:
        for side in SIDES:
            for ct in mesh.contacts[cid][side]:
                nb = ct.neighbour
                if nb in pos and nb < cid:
                    continue
                pa, pb = _c1_blocks(mesh, cid, side, ct)
                R = np.zeros((6, 9 * len(cells)))
                R[:, 9 * pos[cid]:9 * pos[cid] + 9] = pa
                if nb in pos:
                    R[:, 9 * pos[nb]:9 * pos[nb] + 9] -= pb
                blocks.append((R, np.zeros(6)))
    for g, cid in tc_rows:
        R = np.zeros((1, 9 * len(cells)))
        R[0, 9 * pos[cid]:9 * pos[cid] + 9] = tc_phi_operator(mesh, g, cid)
        blocks.append((R, np.array([state.weights.get(g.id, 0.0)])))
    A = np.vstack([r for r, _ in blocks])
    rhs = np.concatenate([v for _, v in blocks])
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 0
    A = A[keep] / norms[keep, None]
    rhs = rhs[keep] / norms[keep]
    known = np.concatenate([state.known[c].ravel() for c in cells])
    vals = np.concatenate([state.ords[c].ravel() for c in cells])
    unknown = np.flatnonzero(~known)
    n = len(unknown)
    b = rhs - A[:, known] @ vals[known]
    Au = A[:, unknown]
    touched = np.any(Au != 0.0, axis=1)
    defect = float(np.max(np.abs(b[~touched]), initial=0.0))
    if n == 0:
        return 0, defect
    Au, b = Au[touched], b[touched]
    if Au.shape[0] == 0:
        return n, np.inf
    x, _, rank, _ = np.linalg.lstsq(Au, b, rcond=1e-10)
    resid = max(defect, float(np.max(np.abs(Au @ x - b))))
    if rank < n:
        resid = np.inf  # not uniquely determined
    for i, flat in enumerate(unknown):
        cid = cells[flat // 9]
        f = int(flat % 9)
        state.ords[cid].ravel()[f] = x[i]
        state.known[cid].ravel()[f] = True
        state.source[cid].ravel()[f] = "completion"
    return n, resid


def _phi_rows(mesh: HierarchicalTMesh, cvr: CvrGraph, support: set[str]) -> list[tuple[GCell, str]]:
    out = []
    for g in cvr.gcells:
        if g.kind != "T":
            continue
        for c in g.one_neighbours:
            if c in support:
                out.append((g, c))
    return out


class BasisCache:
    """Reuse of basis functions between meshes that agree locally.

    A basis function is the only spline supported in its domain ``E`` whose
    phi-image is the indicator of its g-cell, so it is fixed by the local
    data: the cells of ``E`` and the cells touching them, the g-cells these
    cells belong to, the T-connections reaching into ``E`` and the knots.
    Entries are keyed by exactly that data (in ticks), which makes a hit safe
    across refinements elsewhere in the mesh.
    """

    def __init__(self) -> None:
        self.entries: dict[tuple, tuple[int, tuple, dict]] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self.entries)


def _cell_gcells(cvr: CvrGraph) -> dict[str, GCell]:
    m = getattr(cvr, "_cell_gc", None)
    if m is None:
        m = {c: g for g in cvr.gcells for c in g.cells}
        cvr._cell_gc = m
    return m


def local_key(mesh: HierarchicalTMesh, cvr: CvrGraph, gcell_id: str, support: set[str]) -> tuple:
    """Hashable description of everything the build on ``support`` depends on."""
    gc = _cell_gcells(cvr)
    cells = mesh.cells

    def tag(cid):
        g = gc.get(cid)
        return (cells[cid].rect, None if g is None else (g.kind, g.rect))

    halo = set()
    for cid in support:
        for p in cells[cid].corners:
            halo.update(mesh.cells_at_vertex[p])
        for side in SIDES:
            halo.update(ct.neighbour for ct in mesh.contacts[cid][side])
    halo -= support
    tc_index = getattr(cvr, "_tc_index", None)
    if tc_index is None:
        tc_index = {}
        for g in cvr.gcells:
            if g.kind == "T":
                for c in set(g.cells) | set(g.one_neighbours):
                    tc_index.setdefault(c, []).append(g)
        cvr._tc_index = tc_index
    seen = {g.id: g for c in support for g in tc_index.get(c, ())}
    tcs = [
        (g.rect, tuple(sorted(cells[c].rect for c in g.one_neighbours if c in support)))
        for g in seen.values()
    ]
    target = cvr.by_id[gcell_id]
    return (
        tuple(mesh.x_knots),
        tuple(mesh.y_knots),
        mesh.x_first,
        mesh.y_first,
        (target.kind, target.rect),
        tuple(sorted(tag(c) for c in support)),
        tuple(sorted(tag(c) for c in halo)),
        tuple(sorted(tcs)),
    )


def build_basis_function(
    mesh: HierarchicalTMesh,
    cvr: CvrGraph,
    gcell_id: str,
    hbc: bool = True,
    structures: list[TStructure] | None = None,
    rings: int = 2,
    tol: float = 1e-9,
    use_tstructures: bool = True,
    cache: BasisCache | None = None,
) -> BasisFunction:
    """Build the basis function dual to one g-cell on a (simplified) mesh."""
    weights = init_weights(cvr, gcell_id)
    first_key = None
    if cache is not None:
        support, _ = support_domain(mesh, cvr, gcell_id, rings)
        first_key = local_key(mesh, cvr, gcell_id, support)
        hit = cache.entries.get(first_key)
        if hit is not None:
            used, final_key, nets_by_rect = hit
            if used != rings:
                support, _ = support_domain(mesh, cvr, gcell_id, used)
            if used == rings or local_key(mesh, cvr, gcell_id, support) == final_key:
                cache.hits += 1
                by_rect = {mesh.cells[c].rect: c for c in support}
                nets = {by_rect[r]: b.copy() for r, b in nets_by_rect.items()}
                spline = BNetSpline(mesh, nets, hbc=hbc)
                return BasisFunction(gcell_id, spline, spline, set(support), {"cached": 1, "rings": used})
        cache.misses += 1
    if structures is None:
        structures = find_t_structures(mesh)
    n_rings = rings
    while True:
        support, _ = support_domain(mesh, cvr, gcell_id, n_rings)
        try:
            bf = _build_on(mesh, cvr, gcell_id, weights, support, hbc, structures, tol, use_tstructures)
            bf.stats["rings"] = n_rings
            break
        except (PropagationConflict, _TooSmall) as exc:
            if len(support) == len(mesh.cells):
                raise ConstructionError(f"g-cell {gcell_id}: {exc}") from exc
            log.warning("g-cell %s: support domain with %d rings too small (%s); widening", gcell_id, n_rings, exc)
            n_rings += 1
    if cache is not None:
        final_key = first_key if n_rings == rings else local_key(mesh, cvr, gcell_id, support)
        nets_by_rect = {mesh.cells[c].rect: b.copy() for c, b in bf.work_spline.nets.items()}
        cache.entries[first_key] = (n_rings, final_key, nets_by_rect)
    return bf


class _TooSmall(RuntimeError):
    pass


def _build_on(mesh, cvr, gcell_id, weights, support, hbc, structures, tol, use_tstructures) -> BasisFunction:
    state = PropagationState(mesh, cvr, weights, set(support), hbc=hbc, tol=tol)
    init_state(state)
    n0 = state.count_known()
    if use_tstructures:
        tcs = sorted(
            (g for g in cvr.gcells if g.kind == "T" and set(g.cells) & support),
            key=lambda g: (g.level, g.rect[2], g.rect[0]),
        )
        for g in tcs:
            branch = branch_for(mesh, g, structures)
            for comp in split_components(branch):
                branch_bordinates(state, comp, g.id)
            state.completed.add(g.id)
    n1 = state.count_known()
    sweep(state)
    n2 = state.count_known()
    n_comp, resid = _complete(state, _phi_rows(mesh, cvr, support))
    if not resid <= tol:
        raise _TooSmall(f"local completion residual {resid:.3g}")
    nets = {}
    for cid in sorted(support):
        b = state.ords[cid]
        if np.any(b != 0.0):
            nets[cid] = b.copy()
    spline = BNetSpline(mesh, nets, hbc=hbc)
    stats = {
        "seeded": n0,
        "tstructure": n1 - n0,
        "sweep": n2 - n1,
        "completion": n_comp,
        "support_domain_cells": len(support),
        "support_cells": len(nets),
    }
    return BasisFunction(gcell_id, spline, spline, set(support), stats, state.trace)


# ------------------------------------------------------------------ sets
def cell_map(mesh: HierarchicalTMesh, work: HierarchicalTMesh) -> dict[str, str]:
    """For every cell of ``mesh`` the working-mesh cell that contains it.

    Simplification only merges cells and the extension only adds cells, so
    each cell of ``mesh`` lies in exactly one working cell.
    """
    out = {}
    for c in mesh.cells.values():
        out[c.id] = work.locate_ticks(((c.x0 + c.x1) // 2, (c.y0 + c.y1) // 2))
    return out


def _restrict_to(mesh: HierarchicalTMesh, spline: BNetSpline, hbc: bool, cmap: dict[str, str]) -> BNetSpline:
    """Re-express a spline from the working mesh onto ``mesh``'s cells."""
    work = spline.mesh
    nets = {}
    for cid in sorted(cmap):
        wid = cmap[cid]
        if wid not in spline.nets:
            continue
        if wid == cid:
            b = spline.nets[wid].copy()
        else:
            b = reexpress(spline.nets[wid], work.real_rect(wid), mesh.real_rect(cid))
        if np.any(b != 0.0):
            nets[cid] = b
    return BNetSpline(mesh, nets, hbc=hbc)


def build_basis(
    mesh: HierarchicalTMesh, hbc: bool = True, simplified: bool = True, cache: BasisCache | None = None, **kw
) -> BasisSet:
    """All basis functions; with ``hbc=False`` via the extended mesh.

    The construction runs on the working mesh (simplified, and extended for
    ``hbc=False``) and every function is then re-expressed on the cells of
    ``mesh``, dropping the extension collar.
    """
    work = working_mesh(mesh, hbc, simplified)
    cvr = build_cvr(work)
    structures = find_t_structures(work) if kw.get("use_tstructures", True) else []
    cmap = cell_map(mesh, work) if work is not mesh else None
    funcs = []
    for g in cvr.gcells:
        bf = build_basis_function(work, cvr, g.id, hbc=True, structures=structures, cache=cache, **kw)
        if cmap is not None:
            bf.spline = _restrict_to(mesh, bf.spline, hbc, cmap)
        funcs.append(bf)
    return BasisSet(mesh, work, cvr, funcs, hbc)


def basis_for_open_mesh(mesh: HierarchicalTMesh, **kw) -> BasisSet:
    return build_basis(mesh, hbc=False, **kw)


def cell_grid(mesh: HierarchicalTMesh, n: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """``n x n`` interior sample points in every cell (midpoint rule)."""
    u = (np.arange(n) + 0.5) / n
    xs, ys = [], []
    for cid in mesh.cells:
        x0, x1, y0, y1 = mesh.real_rect(cid)
        X, Y = np.meshgrid(x0 + u * (x1 - x0), y0 + u * (y1 - y0))
        xs.append(X.ravel())
        ys.append(Y.ravel())
    return np.concatenate(xs), np.concatenate(ys)


def check_basis(basis: BasisSet, tol: float = 1e-9, oracle: bool = False, npts: int = 10) -> dict:
    """Property report for a basis set.

    Every function is checked on the working mesh for C1 continuity and for
    a phi-image equal to its g-cell's indicator.  With ``oracle`` the
    brute-force constraint residual is added.  Without boundary conditions
    the report also carries the partition-of-unity error on ``npts x npts``
    points per cell and the smallest singular value of the row-normalized
    collocation matrix.
    """
    worst_c1 = worst_phi = worst_res = 0.0
    bad_c1, bad_phi = [], []
    for bf in basis.functions:
        ok, worst, _ = check_c1(bf.work_spline, tol)
        worst_c1 = max(worst_c1, worst)
        if not ok:
            bad_c1.append(bf.gcell)
        try:
            phi = map_phi(bf.work_spline, basis.cvr, tol)
            err = max(abs(v - (1.0 if k == bf.gcell else 0.0)) for k, v in phi.items())
        except PhiError:
            err = float("inf")
        worst_phi = max(worst_phi, err)
        if err > 1e-10:
            bad_phi.append(bf.gcell)
        if oracle:
            from .oracle import constraint_residual

            worst_res = max(worst_res, constraint_residual(basis.work_mesh, bf.work_spline.nets, hbc=True))
    report = {
        "dim": len(basis),
        "hbc": basis.hbc,
        "c1": {"ok": not bad_c1, "worst": worst_c1, "failed": bad_c1},
        "phi": {"ok": not bad_phi, "worst": worst_phi, "failed": bad_phi},
    }
    if oracle:
        report["oracle_residual"] = {"ok": worst_res <= tol, "worst": worst_res}
    if not basis.hbc:
        x, y = cell_grid(basis.mesh, npts)
        pu = float(np.max(np.abs(basis.evaluate(x, y).sum(axis=1) - 1.0))) if len(basis) else float("inf")
        report["partition_of_unity"] = {"ok": pu <= tol, "worst": pu}
        C = basis.collocation_matrix()
        norms = np.linalg.norm(C, axis=1, keepdims=True)
        smin = float(np.linalg.svd(C / np.where(norms > 0, norms, 1.0), compute_uv=False).min()) if C.size else 0.0
        report["collocation"] = {"ok": smin > 1e-10, "smin": smin}
    report["ok"] = all(v["ok"] for v in report.values() if isinstance(v, dict))
    return report
