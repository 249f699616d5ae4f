"""T-structures, branches and B-ordinate propagation.

A T-structure is a c-edge together with every cell touching one of its
vertices.  The cell on the coarse side (the mother cell) and the cells on the
far side (sub-cells) are coupled through the c-edge.  Once the Taylor
bilinear of the spline is known at both end points, the mother cell's two
rows along the c-edge follow, and C1 contact carries them over to the
sub-cells.

At a vertex ``v`` every incident cell's 2x2 block of ordinates nearest ``v``
lies on one bilinear function ``f_v``.  That function is recovered from four
*adaptive nodes*: points where the spline's ``f_v`` value is already known
(weights of P-cells and T-connections, or ordinates computed earlier).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .bnet import near_rows, reexpress
from .cvr import CvrGraph, GCell
from .mesh import (
    OPPOSITE,
    BOUNDARY,
    CROSSING,
    EAST,
    NORTH,
    SIDES,
    SOUTH,
    WEST,
    HierarchicalTMesh,
    Segment,
)

log = logging.getLogger(__name__)

Point = tuple[int, int]


class PropagationConflict(RuntimeError):
    """An ordinate was derived twice with different values."""


class DegenerateNodes(ValueError):
    """The adaptive nodes do not determine a bilinear function."""


class BranchError(RuntimeError):
    """A T-connection is not covered by a connected T-structure branch."""


# ------------------------------------------------------------------ structures
@dataclass(frozen=True)
class TStructure:
    id: str
    mid_edge: Segment
    mother_cell: str
    sub_cells: tuple[str, ...]
    cells: tuple[str, ...]
    end_points: tuple[Point, Point]
    interior_vertices: tuple[Point, ...]
    orientation: str
    level: int

    def touches(self, other: "TStructure") -> bool:
        return self.mid_edge.touches(other.mid_edge)


def _edge_neighbours(mesh: HierarchicalTMesh, e: Segment) -> tuple[list[str], list[str]]:
    """Cells sharing a positive-length piece of ``e``: (low side, high side)."""
    low, high = [], []
    at = mesh.cells_at_vertex
    seen = set()
    for p in e.vertices:
        for cid in at[p]:
            if cid in seen:
                continue
            seen.add(cid)
            c = mesh.cells[cid]
            if e.axis == "h":
                ov = min(c.x1, e.hi) - max(c.x0, e.lo)
                if ov > 0 and c.y1 == e.pos:
                    low.append(cid)
                elif ov > 0 and c.y0 == e.pos:
                    high.append(cid)
            else:
                ov = min(c.y1, e.hi) - max(c.y0, e.lo)
                if ov > 0 and c.x1 == e.pos:
                    low.append(cid)
                elif ov > 0 and c.x0 == e.pos:
                    high.append(cid)
    return sorted(low), sorted(high)


def find_t_structures(mesh: HierarchicalTMesh) -> list[TStructure]:
    """One T-structure per c-edge, in lexicographic order of the c-edges."""
    out = []
    at = mesh.cells_at_vertex
    for e in sorted(mesh.c_edges, key=lambda s: (s.start, s.end)):
        low, high = _edge_neighbours(mesh, e)
        cand = low + high
        # lowest level first; a cell covering more of the edge wins ties
        def cover(cid):
            c = mesh.cells[cid]
            a, b = (c.x0, c.x1) if e.axis == "h" else (c.y0, c.y1)
            return min(b, e.hi) - max(a, e.lo)

        mother = min(cand, key=lambda k: (mesh.cells[k].level, -cover(k), k))
        subs = tuple(k for k in cand if k != mother)
        touching = sorted({cid for p in e.vertices for cid in at[p]})
        out.append(
            TStructure(
                id=f"TS{len(out)}",
                mid_edge=e,
                mother_cell=mother,
                sub_cells=subs,
                cells=tuple(touching),
                end_points=(e.start, e.end),
                interior_vertices=tuple(e.point(s) for s in e.inner),
                orientation="horizontal" if e.axis == "h" else "vertical",
                level=mesh.cells[mother].level,
            )
        )
    return out


@dataclass
class TStructureBranch:
    structures: list[TStructure]

    @property
    def level(self) -> int:
        return min(s.level for s in self.structures)

    def __len__(self) -> int:
        return len(self.structures)


def branch_for(mesh: HierarchicalTMesh, tc: GCell, structures: list[TStructure] | None = None) -> TStructureBranch:
    """The T-structures whose c-edges carry a T-junction corner of the connection.

    Every T-junction lies inside exactly one c-edge, so this is the smallest
    family of structures that reaches all cells of the connection.
    """
    if structures is None:
        structures = find_t_structures(mesh)
    corners = {p for cid in tc.cells for p in mesh.cells[cid].corners}
    picked = [s for s in structures if corners.intersection(s.interior_vertices)]
    if not picked:
        raise BranchError(f"no T-structure reaches connection {tc.id}")
    covered = {c for s in picked for c in s.sub_cells} | {s.mother_cell for s in picked}
    missing = set(tc.cells) - covered
    if missing:
        raise BranchError(f"connection {tc.id}: cells {sorted(missing)} not covered by its branch")
    return TStructureBranch(picked)


def _tie_key(s: TStructure):
    return (s.level, s.end_points[0], s.end_points[1])


def order_branch(branch: TStructureBranch) -> TStructureBranch:
    """Order a branch: lowest level first, then always a connected member.

    Among the members connected to the placed ones, the lowest level goes
    first; equal levels are ordered by the lexicographic start vertex of the
    c-edge.
    """
    todo = sorted(branch.structures, key=_tie_key)
    if not todo:
        raise BranchError("empty branch")
    placed = [todo.pop(0)]
    while todo:
        nxt = [s for s in todo if any(s.touches(p) for p in placed)]
        if not nxt:
            raise BranchError("branch is not connected")
        s = min(nxt, key=_tie_key)
        todo.remove(s)
        placed.append(s)
    return TStructureBranch(placed)


def split_components(branch: TStructureBranch) -> list[TStructureBranch]:
    """Connected components of a family of structures, each ordered."""
    left = list(branch.structures)
    out = []
    while left:
        comp = [min(left, key=_tie_key)]
        left.remove(comp[0])
        grown = True
        while grown:
            grown = False
            for s in list(left):
                if any(s.touches(c) for c in comp):
                    comp.append(s)
                    left.remove(s)
                    grown = True
        out.append(order_branch(TStructureBranch(comp)))
    out.sort(key=lambda b: _tie_key(b.structures[0]))
    return out


# ------------------------------------------------------------------ bilinears
@dataclass(frozen=True)
class BilinearFunc:
    """``f(s, t) = a*s*t + b*s + c*t + d`` in coordinates relative to ``origin``."""

    a: float
    b: float
    c: float
    d: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __call__(self, x, y):
        if not (isinstance(x, float) and isinstance(y, float)):
            x = np.asarray(x)
            y = np.asarray(y)
        s = x - self.origin[0]
        t = y - self.origin[1]
        return self.a * s * t + self.b * s + self.c * t + self.d


@dataclass(frozen=True)
class Node:
    point: tuple[float, float]
    value: float
    provenance: str


def bilinear_from_nodes(nodes, origin=(0.0, 0.0), max_cond: float = 1e10) -> BilinearFunc:
    """Unique bilinear interpolant of four ``Node`` values.

    Raises :class:`DegenerateNodes` when the four points do not determine a
    bilinear function or do so with a 1-norm condition number above
    ``max_cond`` (points are scaled to unit size first).
    """
    if len(nodes) != 4:
        raise DegenerateNodes("need exactly four nodes")
    ox, oy = origin
    pts = np.array([n.point for n in nodes], dtype=float) - (ox, oy)
    scale = max(float(np.max(np.abs(pts))), 1e-300)
    s, t = pts[:, 0] / scale, pts[:, 1] / scale
    M = np.stack([s * t, s, t, np.ones(4)], axis=1)
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        raise DegenerateNodes("adaptive nodes are degenerate (singular)") from None
    cond = np.abs(M).sum(axis=0).max() * np.abs(Minv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > max_cond:
        raise DegenerateNodes(f"adaptive nodes are degenerate (cond={cond:.3g})")
    a, b, c, d = Minv @ np.array([n.value for n in nodes])
    return BilinearFunc(a / scale**2, b / scale, c / scale, d, origin)


def corner_block(cell_rect_ticks, v: Point) -> list[tuple[int, int]]:
    """Ordinate indices ``(j, k)`` of the 2x2 block nearest corner ``v``."""
    x0, x1, y0, y1 = cell_rect_ticks
    js = (0, 1) if v[0] == x0 else (2, 1)
    ks = (0, 1) if v[1] == y0 else (2, 1)
    return [(j, k) for j in js for k in ks]


def vertex_corresponding_ords(f: BilinearFunc, v: Point, mesh: HierarchicalTMesh, cells=None):
    """``(cell, j, k, value)`` for the corner blocks of all cells cornered at ``v``."""
    out = []
    for cid in mesh.cells_with_corner(v):
        if cells is not None and cid not in cells:
            continue
        c = mesh.cells[cid]
        x0, x1, y0, y1 = mesh.real_rect(cid)
        for j, k in corner_block(c.rect, v):
            px = x0 + 0.5 * j * (x1 - x0)
            py = y0 + 0.5 * k * (y1 - y0)
            out.append((cid, j, k, float(f(px, py))))
    return out


# ------------------------------------------------------------------- state
@dataclass
class PropagationState:
    """Partially known B-net of one basis function under construction."""

    mesh: HierarchicalTMesh
    cvr: CvrGraph
    weights: dict[str, float]
    support: set[str]
    hbc: bool = True
    tol: float = 1e-9
    ords: dict[str, np.ndarray] = field(default_factory=dict)
    known: dict[str, np.ndarray] = field(default_factory=dict)
    source: dict[str, np.ndarray] = field(default_factory=dict)
    bilinears: dict[Point, BilinearFunc] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    completed: set[str] = field(default_factory=set)
    n_known: int = 0
    failed: dict[Point, int] = field(default_factory=dict)
    dirty: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        for cid in self.support:
            self.ords[cid] = np.zeros((3, 3))
            self.known[cid] = np.zeros((3, 3), dtype=bool)
            self.source[cid] = np.zeros((3, 3), dtype="<U10")

    def is_known(self, cid: str, j: int, k: int) -> bool:
        if cid not in self.support:
            return True
        return bool(self.known[cid][j, k])

    def value(self, cid: str, j: int, k: int) -> float:
        if cid not in self.support:
            return 0.0
        return float(self.ords[cid][j, k])

    def set(self, cid: str, j: int, k: int, val: float, src: str) -> bool:
        """Record an ordinate; returns True if it was new."""
        if cid not in self.support:
            if abs(val) > self.tol:
                raise PropagationConflict(
                    f"ordinate ({j},{k}) of {cid} outside the support domain derived as {val:.3e}"
                )
            return False
        if self.known[cid][j, k]:
            old = self.ords[cid][j, k]
            if abs(old - val) > self.tol * max(1.0, abs(old)):
                raise PropagationConflict(
                    f"ordinate ({j},{k}) of {cid}: {old:.12g} ({self.source[cid][j, k]}) vs {val:.12g} ({src})"
                )
            return False
        self.ords[cid][j, k] = val
        self.known[cid][j, k] = True
        self.source[cid][j, k] = src
        self.n_known += 1
        self.dirty.add(cid)
        return True

    def count_known(self) -> int:
        return self.n_known


def init_state(state: PropagationState) -> None:
    """Seed P-cell centres with their weights and apply the boundary zeros."""
    mesh = state.mesh
    for g in state.cvr.gcells:
        if g.kind == "P" and g.cells[0] in state.support:
            state.set(g.cells[0], 1, 1, state.weights.get(g.id, 0.0), "weight")
    if state.hbc:
        for cid in sorted(state.support):
            bnd = mesh.on_boundary(cid)
            for side in SIDES:
                if bnd[side]:
                    idx = np.arange(9).reshape(3, 3)
                    for flat in near_rows(idx, side).ravel():
                        state.set(cid, int(flat) // 3, int(flat) % 3, 0.0, "hbc")


# --------------------------------------------------------------- node search
_PRIORITY = {"weight": 0, "domain-centre": 1, "computed": 2, "hbc": 3, "outside": 4}


def node_candidates(state: PropagationState, v: Point) -> list[Node]:
    """All points where ``f_v`` is already known, in a fixed scan order."""
    mesh = state.mesh
    cands: list[Node] = []
    for cid in mesh.cells_with_corner(v):
        c = mesh.cells[cid]
        x0, x1, y0, y1 = mesh.real_rect(cid)
        for j, k in corner_block(c.rect, v):
            if state.is_known(cid, j, k):
                if cid not in state.support:
                    prov = "outside"
                else:
                    src = str(state.source[cid][j, k])
                    prov = src if src in ("weight", "hbc") else "computed"
                p = (x0 + 0.5 * j * (x1 - x0), y0 + 0.5 * k * (y1 - y0))
                cands.append(Node(p, state.value(cid, j, k), prov))
    for g in _trd_corner_index(state.cvr).get(v, ()):
        if any(_on_closed(mesh.cells[c].rect, v) for c in g.one_neighbours):
            cands.append(Node(g.centre, state.weights.get(g.id, 0.0), "domain-centre"))
    # de-duplicate identical points (same point seen from two cells)
    uniq: dict[tuple[float, float], Node] = {}
    for n in cands:
        key = (round(n.point[0], 12), round(n.point[1], 12))
        if key not in uniq or _PRIORITY[n.provenance] < _PRIORITY[uniq[key].provenance]:
            uniq[key] = n
    vx, vy = mesh.real_point(v)
    return sorted(
        uniq.values(),
        key=lambda n: (_PRIORITY[n.provenance], abs(n.point[0] - vx) + abs(n.point[1] - vy), n.point),
    )


def _trd_corner_index(cvr: CvrGraph) -> dict[Point, list[GCell]]:
    """T-connections keyed by the corners of their covering rectangles."""
    idx = getattr(cvr, "_trd_index", None)
    if idx is None:
        idx = {}
        for g in cvr.gcells:
            if g.kind == "T":
                for p in _rect_corners(g.rect):
                    idx.setdefault(p, []).append(g)
        cvr._trd_index = idx
    return idx


def _rect_corners(r) -> tuple[Point, ...]:
    return ((r[0], r[2]), (r[1], r[2]), (r[0], r[3]), (r[1], r[3]))


def _on_closed(rect, p: Point) -> bool:
    return rect[0] <= p[0] <= rect[1] and rect[2] <= p[1] <= rect[3]


def select_adaptive_nodes(
    state: PropagationState, v: Point, max_candidates: int = 12, cands: list[Node] | None = None
) -> list[Node]:
    """First well-conditioned quadruple among the known points around ``v``.

    Candidates are taken in priority order (see :func:`node_candidates`);
    a quadruple is admissible when its bilinear interpolation problem has a
    1-norm condition number below 1e6 after scaling.
    """
    if cands is None:
        cands = node_candidates(state, v)
    cands = cands[:max_candidates]
    xs = {round(n.point[0], 12) for n in cands}
    ys = {round(n.point[1], 12) for n in cands}
    if len(cands) < 4 or len(xs) < 2 or len(ys) < 2:
        raise DegenerateNodes(f"not enough spread-out nodes at vertex {v} ({len(cands)} candidates)")
    origin = state.mesh.real_point(v)
    for quad in itertools.combinations(cands, 4):
        try:
            bilinear_from_nodes(quad, origin, max_cond=1e6)
        except DegenerateNodes:
            continue
        return list(quad)
    raise DegenerateNodes(f"no admissible adaptive nodes at vertex {v} ({len(cands)} candidates)")


def solve_vertex(state: PropagationState, v: Point, label: str = "") -> BilinearFunc | None:
    """Determine ``f_v`` if possible, check every other known point, fill blocks.

    Returns ``None`` when the known points around ``v`` do not determine a
    bilinear function yet.  A failed attempt is remembered together with the
    number of known ordinates at the time, so an unchanged vertex is not
    retried.
    """
    if v in state.bilinears:
        return state.bilinears[v]
    mesh = state.mesh
    origin = mesh.real_point(v)
    boundary_zero = state.hbc and mesh.vertices.get(v) == BOUNDARY
    if not boundary_zero and state.failed.get(v) == state.n_known:
        return None
    cands = node_candidates(state, v)
    if boundary_zero:
        f = BilinearFunc(0.0, 0.0, 0.0, 0.0, origin)
        nodes: list[Node] = []
    else:
        try:
            nodes = select_adaptive_nodes(state, v, cands=cands)
        except DegenerateNodes:
            state.failed[v] = state.n_known
            return None
        f = bilinear_from_nodes(nodes, origin)
    scale = max([1.0] + [abs(n.value) for n in nodes])
    if cands:
        P = np.array([n.point for n in cands])
        got = f(P[:, 0], P[:, 1])
        want = np.array([n.value for n in cands])
        bad = np.flatnonzero(np.abs(got - want) > state.tol * scale)
        if bad.size:
            n = cands[int(bad[0])]
            raise PropagationConflict(
                f"vertex {v}: node {n.point} ({n.provenance}) = {n.value:.12g} but f_v gives {got[bad[0]]:.12g}"
            )
    state.bilinears[v] = f
    new = 0
    for cid, j, k, val in vertex_corresponding_ords(f, v, mesh):
        new += state.set(cid, j, k, val, "bilinear")
    state.trace.append(
        {
            "vertex": [str(a) for a in v],
            "kind": mesh.vertices.get(v),
            "label": label,
            "nodes": [{"point": n.point, "value": n.value, "provenance": n.provenance} for n in nodes],
            "bilinear": [f.a, f.b, f.c, f.d],
            "new_ordinates": new,
        }
    )
    return f


# ---------------------------------------------------------------- propagation
def propagate_edge(state: PropagationState, src: str, side: str, dst: str, check_only_new: bool = False) -> int:
    """Carry the two known rows of ``src`` along ``side`` over to ``dst``.

    Only done when ``dst``'s whole side lies on the shared edge, so that its
    two rows are fully determined.  Returns the number of new ordinates.
    With ``check_only_new`` a destination whose two rows are all known is
    skipped instead of being re-checked.
    """
    mesh = state.mesh
    if src not in state.support and not state.hbc:
        return 0
    idx = near_rows(np.arange(9).reshape(3, 3), side).ravel()
    if src in state.support:
        kn = state.known[src].ravel()[idx]
        if not kn.all():
            return 0
        b = state.ords[src].copy()
    else:
        b = np.zeros((3, 3))
    opp = OPPOSITE[side]
    didx = near_rows(np.arange(9).reshape(3, 3), opp)
    if check_only_new and state.known[dst].ravel()[didx.ravel()].all():
        return 0
    c, d = mesh.cells[src], mesh.cells[dst]
    if side in (WEST, EAST):
        if not (c.y0 <= d.y0 and d.y1 <= c.y1):
            return 0
    else:
        if not (c.x0 <= d.x0 and d.x1 <= c.x1):
            return 0
    # the far row does not influence the two rows next to the edge
    rows = near_rows(reexpress(b, mesh.real_rect(src), mesh.real_rect(dst)), opp)
    new = 0
    for r in range(2):
        for q in range(3):
            flat = int(didx[r, q])
            new += state.set(dst, flat // 3, flat % 3, float(rows[r, q]), "c1")
    return new


def propagate_structure(state: PropagationState, ts: TStructure) -> int:
    """Lemma-style step: mother-cell rows along the c-edge fix the sub-cells."""
    mesh = state.mesh
    e = ts.mid_edge
    m = mesh.cells[ts.mother_cell]
    if e.axis == "h":
        side = NORTH if m.y1 == e.pos else SOUTH
    else:
        side = EAST if m.x1 == e.pos else WEST
    new = 0
    for cid in ts.sub_cells:
        new += propagate_edge(state, ts.mother_cell, side, cid)
    return new


def branch_bordinates(state: PropagationState, branch: TStructureBranch, tc_id: str = "") -> int:
    """Run the ordered branch: end-point bilinears, then sub-cell rows."""
    before = state.count_known()
    for i, ts in enumerate(branch.structures):
        label = f"{tc_id}:{ts.id}:{'first' if i == 0 else 'chained'}"
        for v in ts.end_points:
            solve_vertex(state, v, label)
        propagate_structure(state, ts)
    return state.count_known() - before


def sweep(state: PropagationState, max_rounds: int = 50) -> int:
    """Alternate vertex bilinears and edge propagation until nothing changes.

    After the first round only the corners and contacts of cells that gained
    ordinates in the previous round are revisited.
    """
    mesh = state.mesh
    start = state.count_known()
    active = set(state.support)
    for _ in range(max_rounds):
        state.dirty = set()
        verts = sorted({p for cid in active for p in mesh.cells[cid].corners})
        for v in verts:
            if v not in state.bilinears:
                solve_vertex(state, v, "sweep")
        cells = sorted(active | state.dirty)
        for cid in cells:
            for side in SIDES:
                for ct in mesh.contacts[cid][side]:
                    if ct.neighbour not in state.support:
                        continue
                    propagate_edge(state, cid, side, ct.neighbour, True)
                    propagate_edge(state, ct.neighbour, OPPOSITE[side], cid, True)
        if not state.dirty:
            break
        active = set(state.dirty)
        for c in state.dirty:
            active.update(n.neighbour for sd in SIDES for n in mesh.contacts[c][sd] if n.neighbour in state.support)
    return state.count_known() - start
