"""Crossing-vertex relationship (CVR) graph and its bounded faces.

Interior cells are either P-cells (four crossing corners) or T-cells.  T-cells
that share a T-junction are grouped into T-connections.  The CVR graph keeps
only crossing vertices and the straight runs of mesh line between
consecutive crossings; its bounded faces are the P-cells and the
T-connections, one face each.  The faces are counted in three independent
ways and a disagreement raises :class:`CvrConsistencyError`.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .mesh import (
    CROSSING,
    SIDES,
    T_JUNCTION,
    HierarchicalTMesh,
    extend,
    simplify,
)


class CvrConsistencyError(RuntimeError):
    """The face counts of the CVR graph disagree."""


@dataclass(frozen=True)
class GCell:
    """A bounded face of the CVR graph.

    ``kind`` is ``"P"`` for a P-cell and ``"T"`` for a T-connection.  ``rect``
    is the covering rectangle in ticks (the cell itself for P-cells) and
    ``centre`` its real centre, where the face's weight lives.
    """

    id: str
    kind: str
    cells: tuple[str, ...]
    rect: tuple[int, int, int, int]
    centre: tuple[float, float]
    level: int
    one_neighbours: tuple[str, ...] = ()


@dataclass
class CvrGraph:
    mesh: HierarchicalTMesh
    gcells: list[GCell]
    crossing_vertices: list[tuple[int, int]]
    segments: list[tuple[tuple[int, int], tuple[int, int]]]
    counts: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.gcells)

    @cached_property
    def by_id(self) -> dict[str, GCell]:
        return {g.id: g for g in self.gcells}

    def weights(self, values) -> dict[str, float]:
        return {g.id: float(v) for g, v in zip(self.gcells, values)}


def interior_cells(mesh: HierarchicalTMesh) -> list[str]:
    return [c.id for c in mesh.sorted_cells() if not mesh.is_boundary_cell(c.id)]


def classify_cells(mesh: HierarchicalTMesh) -> dict[str, str]:
    """Label every cell ``"P"``, ``"T"`` or ``"B"`` (boundary)."""
    out = {}
    for c in mesh.sorted_cells():
        if mesh.is_boundary_cell(c.id):
            out[c.id] = "B"
        elif all(mesh.vertices[p] == CROSSING for p in c.corners):
            out[c.id] = "P"
        else:
            out[c.id] = "T"
    return out


class _DSU:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def groups(self) -> list[list]:
        out: dict = {}
        for i in self.parent:
            out.setdefault(self.find(i), []).append(i)
        return sorted((sorted(g) for g in out.values()), key=lambda g: g[0])


def t_connections(mesh: HierarchicalTMesh) -> list[list[str]]:
    """Groups of T-cells linked through T-junctions that are corners of both.

    Boundary cells take part in the linking: a group that reaches a boundary
    cell belongs to the outer face and is not reported.
    """
    return _t_groups(mesh)[0]


def _t_groups(mesh: HierarchicalTMesh) -> tuple[list[list[str]], list[str]]:
    kinds = classify_cells(mesh)
    members = [cid for cid, k in kinds.items() if k != "P"]
    outer = "__outer__"
    dsu = _DSU(members + [outer])
    for cid, k in kinds.items():
        if k == "B":
            dsu.union(outer, cid)
    at = mesh.cells_at_vertex
    for p, kind in mesh.vertices.items():
        if kind != T_JUNCTION:
            continue
        linked = [cid for cid in at[p] if kinds[cid] != "P" and p in mesh.cells[cid].corners]
        for other in linked[1:]:
            dsu.union(linked[0], other)
    groups, absorbed = [], []
    root_out = dsu.find(outer)
    for g in dsu.groups():
        if dsu.find(g[0]) == root_out:
            absorbed += [c for c in g if c != outer and kinds[c] == "T"]
        else:
            groups.append(g)
    return groups, sorted(absorbed)


def covering_rect(mesh: HierarchicalTMesh, cells) -> tuple[int, int, int, int]:
    cs = [mesh.cells[c] for c in cells]
    return (min(c.x0 for c in cs), max(c.x1 for c in cs), min(c.y0 for c in cs), max(c.y1 for c in cs))


def one_neighbour_cells(mesh: HierarchicalTMesh, group, rect) -> list[str]:
    """Lowest-level cells outside the group that share a full side of its
    covering rectangle.

    Such a cell's polynomial, re-expressed on the rectangle, gives the
    connection's value.  Only the cells of the lowest level among all full-side
    neighbours are kept, sorted by id.
    """
    gx0, gx1, gy0, gy1 = rect
    inside = set(group)
    cand = set()
    for cid in group:
        for side in SIDES:
            for ct in mesh.contacts[cid][side]:
                if ct.neighbour in inside:
                    continue
                c = mesh.cells[ct.neighbour]
                if (
                    (c.x1 == gx0 or c.x0 == gx1) and c.y0 <= gy0 and gy1 <= c.y1
                ) or ((c.y1 == gy0 or c.y0 == gy1) and c.x0 <= gx0 and gx1 <= c.x1):
                    cand.add(c.id)
    if not cand:
        return []
    low = min(mesh.cells[k].level for k in cand)
    return sorted(k for k in cand if mesh.cells[k].level == low)


def _cvr_segments(mesh: HierarchicalTMesh):
    """CVR segments and, per mesh line, the sorted crossing positions on it."""
    segs = []
    crossing_on: dict[tuple[str, int], list[tuple[int, int, list[int]]]] = {}
    for e in mesh.l_edges:
        if e.kind == "boundary":
            continue
        pos = [s for s in (e.lo, *e.inner, e.hi) if mesh.vertices[e.point(s)] == CROSSING]
        crossing_on.setdefault((e.axis, e.pos), []).append((e.lo, e.hi, pos))
        for a, b in zip(pos, pos[1:]):
            segs.append((e.point(a), e.point(b)))
    return segs, crossing_on


def _contact_on_cvr(crossing_on, axis: str, pos: int, lo: int, hi: int) -> bool:
    for elo, ehi, cps in crossing_on.get((axis, pos), []):
        if elo <= lo and hi <= ehi:
            i = bisect.bisect_right(cps, lo) - 1
            j = bisect.bisect_left(cps, hi)
            return i >= 0 and j < len(cps)
    return False


def build_cvr(mesh: HierarchicalTMesh) -> CvrGraph:
    """Build the CVR graph of ``mesh`` (used as is; see :func:`dim_space`)."""
    kinds = classify_cells(mesh)
    crossing = sorted(p for p, k in mesh.vertices.items() if k == CROSSING)
    segs, crossing_on = _cvr_segments(mesh)

    # count 1: Euler formula for the planar graph
    dsu = _DSU(crossing)
    for a, b in segs:
        dsu.union(a, b)
    n_comp = len(dsu.groups()) if crossing else 0
    euler = len(segs) - len(crossing) + n_comp

    # count 2: regions of cells glued across edges that are not on the graph
    outer = "__outer__"
    cdsu = _DSU(list(mesh.cells) + [outer])
    for cid, k in kinds.items():
        if k == "B":
            cdsu.union(outer, cid)
    for cid in mesh.cells:
        c = mesh.cells[cid]
        for side in ("E", "N"):
            for ct in mesh.contacts[cid][side]:
                axis, pos = ("v", c.x1) if side == "E" else ("h", c.y1)
                if not _contact_on_cvr(crossing_on, axis, pos, ct.lo, ct.hi):
                    cdsu.union(cid, ct.neighbour)
    regions = [g for g in cdsu.groups() if cdsu.find(g[0]) != cdsu.find(outer)]

    # count 3: P-cells plus T-connections
    pcells = [cid for cid, k in kinds.items() if k == "P"]
    tcons = t_connections(mesh)

    counts = {"euler": euler, "regions": len(regions), "p_plus_t": len(pcells) + len(tcons)}
    if len(set(counts.values())) != 1:
        raise CvrConsistencyError(f"CVR face counts disagree: {counts}")
    region_sets = {frozenset(r) for r in regions}
    gcells = []
    for cid in pcells:
        if frozenset([cid]) not in region_sets:
            raise CvrConsistencyError(f"P-cell {cid} is not a face of the CVR graph")
        c = mesh.cells[cid]
        gcells.append(_make_gcell(mesh, "P", [cid], c.rect, ()))
    for grp in tcons:
        if frozenset(grp) not in region_sets:
            raise CvrConsistencyError(f"T-connection {grp} is not a face of the CVR graph")
        rect = covering_rect(mesh, grp)
        gcells.append(_make_gcell(mesh, "T", grp, rect, one_neighbour_cells(mesh, grp, rect)))
    gcells.sort(key=lambda g: (g.rect[2], g.rect[0], g.rect[3], g.rect[1]))
    return CvrGraph(mesh, gcells, crossing, segs, counts)


def _make_gcell(mesh, kind, cells, rect, ones) -> GCell:
    x0, x1, y0, y1 = rect
    centre = (0.5 * (mesh.x_real(x0) + mesh.x_real(x1)), 0.5 * (mesh.y_real(y0) + mesh.y_real(y1)))
    # a T-connection takes the level of its one-neighbour cells
    level = min(mesh.cells[c].level for c in (ones or cells))
    gid = ("P:" if kind == "P" else "T:") + cells[0]
    return GCell(gid, kind, tuple(cells), rect, centre, level, tuple(ones))


def working_mesh(mesh: HierarchicalTMesh, hbc: bool = True, simplified: bool = True) -> HierarchicalTMesh:
    """Mesh on which the CVR graph and the basis are built.

    Without homogeneous boundary conditions the mesh is first extended by
    two collar layers; in both cases it is then simplified unless
    ``simplified`` is false.
    """
    m = mesh if hbc else extend(mesh)
    return simplify(m) if simplified else m


def dim_space(mesh: HierarchicalTMesh, hbc: bool = True, simplified: bool = True) -> int:
    """Spline-space dimension as the number of bounded CVR faces."""
    return len(build_cvr(working_mesh(mesh, hbc, simplified)))


def dim_tensor(cx: int, cy: int, hbc: bool = True) -> int:
    return max(cx - 2, 0) * max(cy - 2, 0) if hbc else (cx + 2) * (cy + 2)


def face_centres(graph: CvrGraph) -> np.ndarray:
    return np.array([g.centre for g in graph.gcells], dtype=float).reshape(-1, 2)
