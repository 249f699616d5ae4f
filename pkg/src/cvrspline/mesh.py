"""Dyadic T-meshes on a rectangular domain.

Every mesh line sits at an exact dyadic position inside a level-0 knot
interval, so all topology (vertex valence, line segments, adjacency) is
decided with integer arithmetic.  A position on an axis is stored as an
integer number of *ticks*; one level-0 interval spans ``SCALE`` ticks.
Real coordinates are only produced when evaluating or reporting.

Hierarchical meshes are built by repeated 2x2 subdivision.  Simplification
and the boundary extension produce general rectangular tilings whose cells
are no longer tree nodes, so the same class also stores an arbitrary set of
axis-aligned dyadic rectangles.
"""

from __future__ import annotations

import bisect
import json
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np

MAX_DEPTH = 30
SCALE = 1 << MAX_DEPTH

# sides of a cell, in the order used throughout the package
WEST, EAST, SOUTH, NORTH = "W", "E", "S", "N"
SIDES = (WEST, EAST, SOUTH, NORTH)
OPPOSITE = {WEST: EAST, EAST: WEST, SOUTH: NORTH, NORTH: SOUTH}

# vertex kinds
BOUNDARY, CROSSING, T_JUNCTION = "boundary", "crossing", "t-junction"

_PATH_ROOT = re.compile(r"^L0:\((\d+),(\d+)\)$")


class MeshError(ValueError):
    """Raised for malformed meshes, unknown cells or illegal operations."""


@dataclass(frozen=True, order=True)
class AxisCoord:
    """Exact position on one axis: ``seg + num / 2**depth`` in knot-index units.

    The representation is canonical: ``num`` is odd unless ``depth == 0``.
    """

    seg: int
    num: int
    depth: int

    @staticmethod
    def from_ticks(t: int) -> "AxisCoord":
        seg, rem = divmod(t, SCALE)
        if rem == 0:
            return AxisCoord(seg, 0, 0)
        depth = MAX_DEPTH
        while rem % 2 == 0:
            rem //= 2
            depth -= 1
        return AxisCoord(seg, rem, depth)

    def to_ticks(self) -> int:
        return self.seg * SCALE + (self.num << (MAX_DEPTH - self.depth))

    def __str__(self) -> str:
        if self.depth == 0:
            return str(self.seg)
        return f"{self.seg}+{self.num}/{1 << self.depth}"


@dataclass(frozen=True)
class Cell:
    """Axis-aligned leaf rectangle ``[x0, x1] x [y0, y1]`` in ticks."""

    id: str
    x0: int
    x1: int
    y0: int
    y1: int
    level: int

    @property
    def corners(self) -> tuple[tuple[int, int], ...]:
        """Corners in the order SW, SE, NW, NE."""
        return ((self.x0, self.y0), (self.x1, self.y0), (self.x0, self.y1), (self.x1, self.y1))

    @property
    def rect(self) -> tuple[int, int, int, int]:
        return (self.x0, self.x1, self.y0, self.y1)

    def contains_point(self, p: tuple[int, int]) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1


@dataclass(frozen=True)
class Segment:
    """A maximal or partial straight mesh segment.

    ``axis`` is ``"h"`` for horizontal segments (fixed ``pos`` = y) and ``"v"``
    for vertical ones (fixed ``pos`` = x).  ``lo``/``hi`` are the running
    coordinate of the endpoints and ``inner`` lists the running coordinates of
    the interior vertices.
    """

    axis: str
    pos: int
    lo: int
    hi: int
    inner: tuple[int, ...]
    kind: str = ""

    def point(self, s: int) -> tuple[int, int]:
        return (s, self.pos) if self.axis == "h" else (self.pos, s)

    @property
    def start(self) -> tuple[int, int]:
        return self.point(self.lo)

    @property
    def end(self) -> tuple[int, int]:
        return self.point(self.hi)

    @property
    def vertices(self) -> list[tuple[int, int]]:
        return [self.point(s) for s in (self.lo, *self.inner, self.hi)]

    def touches(self, other: "Segment") -> bool:
        """True when the two closed segments share at least one point."""
        if self.axis == other.axis:
            return self.pos == other.pos and self.lo <= other.hi and other.lo <= self.hi
        return self.lo <= other.pos <= self.hi and other.lo <= self.pos <= other.hi


@dataclass(frozen=True)
class Contact:
    """Shared edge portion between a cell and its neighbour across ``side``."""

    neighbour: str
    lo: int
    hi: int


def level_of_rect(x0: int, x1: int, y0: int, y1: int) -> int:
    """Refinement level implied by the shorter side of a dyadic rectangle."""
    short = min(x1 - x0, y1 - y0)
    level = 0
    while (SCALE >> level) > short:
        level += 1
    return level


def _merge_intervals(items: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for a, b in sorted(items):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def _in_interval_list(ivals: list[tuple[int, int]], s: int, left_closed: bool) -> bool:
    """Whether ``s`` has mesh line on one side within a merged interval list.

    With ``left_closed`` we test for ``a <= s < b`` (line continues towards
    larger values), otherwise ``a < s <= b``.
    """
    i = bisect.bisect_right(ivals, (s, float("inf"))) - 1
    for j in (i, i - 1):
        if 0 <= j < len(ivals):
            a, b = ivals[j]
            if left_closed and a <= s < b:
                return True
            if not left_closed and a < s <= b:
                return True
    return False


class HierarchicalTMesh:
    """Rectangular tiling of ``[x_0, x_n] x [y_0, y_m]`` by dyadic cells.

    Parameters
    ----------
    x_knots, y_knots:
        Strictly increasing level-0 knots.
    cells:
        Leaf cells.  They must tile the domain box exactly.
    subdivisions:
        Paths of the subdivided tree nodes.  ``None`` marks a general
        (non-tree) tiling such as the output of :func:`simplify`.
    x_first, y_first:
        Knot-index of ``x_knots[0]`` and ``y_knots[0]``.  Extended meshes use
        negative indices for the collar so original cell ids stay valid.
    """

    def __init__(
        self,
        x_knots: Sequence[float],
        y_knots: Sequence[float],
        cells: Iterable[Cell],
        subdivisions: frozenset[str] | None = frozenset(),
        x_first: int = 0,
        y_first: int = 0,
        domain: tuple[int, int, int, int] | None = None,
    ) -> None:
        self.x_knots = np.asarray(x_knots, dtype=float)
        self.y_knots = np.asarray(y_knots, dtype=float)
        self.x_first = x_first
        self.y_first = y_first
        self.cells: dict[str, Cell] = {c.id: c for c in cells}
        self.subdivisions = subdivisions
        self.box = (
            x_first * SCALE,
            (x_first + len(self.x_knots) - 1) * SCALE,
            y_first * SCALE,
            (y_first + len(self.y_knots) - 1) * SCALE,
        )
        # domain whose boundary counts as "the boundary" (differs from the box
        # only for meshes that carry an inner reference domain)
        self.domain = domain if domain is not None else self.box

    # ------------------------------------------------------------ construction
    @classmethod
    def tensor(cls, x_knots: Sequence[float], y_knots: Sequence[float]) -> "HierarchicalTMesh":
        """Level-0 tensor mesh on the given knots."""
        xs = np.asarray(x_knots, dtype=float)
        ys = np.asarray(y_knots, dtype=float)
        if xs.ndim != 1 or ys.ndim != 1 or len(xs) < 2 or len(ys) < 2:
            raise MeshError("need at least two knots per axis")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise MeshError("knots must be strictly increasing")
        cells = [
            Cell(f"L0:({i},{j})", i * SCALE, (i + 1) * SCALE, j * SCALE, (j + 1) * SCALE, 0)
            for i in range(len(xs) - 1)
            for j in range(len(ys) - 1)
        ]
        return cls(xs, ys, cells)

    @property
    def is_hierarchical(self) -> bool:
        return self.subdivisions is not None

    def subdivide(self, cell_id: str) -> "HierarchicalTMesh":
        """Split a leaf into four quadrants (q0=SW, q1=SE, q2=NW, q3=NE)."""
        if cell_id not in self.cells:
            raise MeshError(f"no leaf cell {cell_id!r}")
        c = self.cells[cell_id]
        if c.x1 - c.x0 < 2 or c.y1 - c.y0 < 2:
            raise MeshError(f"maximum refinement depth {MAX_DEPTH} reached")
        xm, ym = (c.x0 + c.x1) // 2, (c.y0 + c.y1) // 2
        lvl = c.level + 1
        kids = [
            Cell(f"{cell_id}/q0", c.x0, xm, c.y0, ym, lvl),
            Cell(f"{cell_id}/q1", xm, c.x1, c.y0, ym, lvl),
            Cell(f"{cell_id}/q2", c.x0, xm, ym, c.y1, lvl),
            Cell(f"{cell_id}/q3", xm, c.x1, ym, c.y1, lvl),
        ]
        cells = [v for k, v in self.cells.items() if k != cell_id] + kids
        subs = None if self.subdivisions is None else self.subdivisions | {cell_id}
        return HierarchicalTMesh(
            self.x_knots, self.y_knots, cells, subs, self.x_first, self.y_first, self.domain
        )

    def subdivide_many(self, cell_ids: Iterable[str]) -> "HierarchicalTMesh":
        mesh = self
        for cid in sorted(set(cell_ids)):
            mesh = mesh.subdivide(cid)
        return mesh

    @classmethod
    def from_paths(
        cls, x_knots: Sequence[float], y_knots: Sequence[float], paths: Iterable[str]
    ) -> "HierarchicalTMesh":
        """Rebuild a hierarchical mesh from its subdivided-node paths."""
        mesh = cls.tensor(x_knots, y_knots)
        # shorter paths first so that parents exist before children
        for p in sorted(set(paths), key=lambda s: (s.count("/"), s)):
            if p not in mesh.cells:
                raise MeshError(f"subdivision path {p!r} is not a leaf of the partial mesh")
            mesh = mesh.subdivide(p)
        return mesh

    # ----------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        out: dict = {"x_knots": self.x_knots.tolist(), "y_knots": self.y_knots.tolist()}
        if self.is_hierarchical and self.x_first == 0 and self.y_first == 0:
            out["subdivisions"] = sorted(self.subdivisions)  # type: ignore[arg-type]
        else:
            out["x_first"] = self.x_first
            out["y_first"] = self.y_first
            out["cells"] = [
                [c.id, *(str(AxisCoord.from_ticks(t)) for t in c.rect)]
                for c in self.sorted_cells()
            ]
            if self.domain != self.box:
                out["domain"] = [str(AxisCoord.from_ticks(t)) for t in self.domain]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "HierarchicalTMesh":
        try:
            xk, yk = data["x_knots"], data["y_knots"]
        except (KeyError, TypeError) as exc:
            raise MeshError("mesh JSON needs x_knots and y_knots") from exc
        if "cells" in data:
            cells = []
            for entry in data["cells"]:
                cid, *coords = entry
                x0, x1, y0, y1 = (_parse_axis(s) for s in coords)
                cells.append(Cell(cid, x0, x1, y0, y1, level_of_rect(x0, x1, y0, y1)))
            dom = data.get("domain")
            domain = tuple(_parse_axis(s) for s in dom) if dom else None
            mesh = cls(xk, yk, cells, None, data.get("x_first", 0), data.get("y_first", 0), domain)
            mesh.validate()
            return mesh
        subs = data.get("subdivisions", [])
        for p in subs:
            if not isinstance(p, str) or not _valid_path(p):
                raise MeshError(f"malformed subdivision path {p!r}")
        return cls.from_paths(xk, yk, subs)

    @classmethod
    def from_json(cls, text: str) -> "HierarchicalTMesh":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MeshError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        """Check that the cells tile the box without gaps or overlaps."""
        x0, x1, y0, y1 = self.box
        area = sum((c.x1 - c.x0) * (c.y1 - c.y0) for c in self.cells.values())
        if area != (x1 - x0) * (y1 - y0):
            raise MeshError("cells do not tile the domain")
        for c in self.cells.values():
            if not (x0 <= c.x0 < c.x1 <= x1 and y0 <= c.y0 < c.y1 <= y1):
                raise MeshError(f"cell {c.id} leaves the domain")
        # equal total area plus no overlaps between neighbours is enough
        for c in self.cells.values():
            for other in self.cells_near(c):
                if other.id != c.id and (
                    min(c.x1, other.x1) > max(c.x0, other.x0)
                    and min(c.y1, other.y1) > max(c.y0, other.y0)
                ):
                    raise MeshError(f"cells {c.id} and {other.id} overlap")

    # ------------------------------------------------------------------ coords
    def x_real(self, t):
        return _ticks_to_real(t, self.x_knots, self.x_first)

    def y_real(self, t):
        return _ticks_to_real(t, self.y_knots, self.y_first)

    def real_rect(self, cid: str) -> tuple[float, float, float, float]:
        return self._real_rects[cid]

    @cached_property
    def _real_rects(self) -> dict[str, tuple[float, float, float, float]]:
        return {
            cid: (self.x_real(c.x0), self.x_real(c.x1), self.y_real(c.y0), self.y_real(c.y1))
            for cid, c in self.cells.items()
        }

    def real_point(self, p: tuple[int, int]) -> tuple[float, float]:
        return (self.x_real(p[0]), self.y_real(p[1]))

    def sorted_cells(self) -> list[Cell]:
        """Cells in a deterministic geometric order (row-major by SW corner)."""
        return sorted(self.cells.values(), key=lambda c: (c.y0, c.x0))

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[Cell]:
        return iter(self.sorted_cells())

    # ---------------------------------------------------------------- topology
    @cached_property
    def _lines(self) -> tuple[dict[int, list], dict[int, list]]:
        """Merged mesh lines: ``h[y]`` and ``v[x]`` lists of (lo, hi) intervals."""
        h: dict[int, list] = {}
        v: dict[int, list] = {}
        for c in self.cells.values():
            h.setdefault(c.y0, []).append((c.x0, c.x1))
            h.setdefault(c.y1, []).append((c.x0, c.x1))
            v.setdefault(c.x0, []).append((c.y0, c.y1))
            v.setdefault(c.x1, []).append((c.y0, c.y1))
        return (
            {k: _merge_intervals(iv) for k, iv in h.items()},
            {k: _merge_intervals(iv) for k, iv in v.items()},
        )

    @cached_property
    def vertices(self) -> dict[tuple[int, int], str]:
        """All vertices (cell corners) mapped to their kind."""
        h, v = self._lines
        out: dict[tuple[int, int], str] = {}
        bx0, bx1, by0, by1 = self.box
        for c in self.cells.values():
            for p in c.corners:
                if p in out:
                    continue
                x, y = p
                if x in (bx0, bx1) or y in (by0, by1):
                    out[p] = BOUNDARY
                    continue
                hv = h.get(y, [])
                vv = v.get(x, [])
                val = (
                    _in_interval_list(hv, x, True)
                    + _in_interval_list(hv, x, False)
                    + _in_interval_list(vv, y, True)
                    + _in_interval_list(vv, y, False)
                )
                out[p] = CROSSING if val == 4 else T_JUNCTION
        return out

    def vertex_kind(self, p: tuple[int, int]) -> str:
        return self.vertices[p]

    def arms(self, p: tuple[int, int]) -> dict[str, bool]:
        """Which of the four directions carry a mesh line leaving ``p``."""
        h, v = self._lines
        x, y = p
        hv, vv = h.get(y, []), v.get(x, [])
        return {
            EAST: _in_interval_list(hv, x, True),
            WEST: _in_interval_list(hv, x, False),
            NORTH: _in_interval_list(vv, y, True),
            SOUTH: _in_interval_list(vv, y, False),
        }

    @cached_property
    def _vertices_on_lines(self) -> tuple[dict[int, list[int]], dict[int, list[int]]]:
        by_y: dict[int, list[int]] = {}
        by_x: dict[int, list[int]] = {}
        for x, y in self.vertices:
            by_y.setdefault(y, []).append(x)
            by_x.setdefault(x, []).append(y)
        for d in (by_y, by_x):
            for k in d:
                d[k].sort()
        return by_y, by_x

    def _segments_on(self, axis: str) -> Iterator[tuple[int, int, int, list[int]]]:
        h, v = self._lines
        by_y, by_x = self._vertices_on_lines
        lines, verts = (h, by_y) if axis == "h" else (v, by_x)
        for pos in sorted(lines):
            vs = verts.get(pos, [])
            for lo, hi in lines[pos]:
                i = bisect.bisect_right(vs, lo)
                j = bisect.bisect_left(vs, hi)
                yield pos, lo, hi, vs[i:j]

    def _on_boundary_line(self, axis: str, pos: int) -> bool:
        bx0, bx1, by0, by1 = self.box
        return pos in ((by0, by1) if axis == "h" else (bx0, bx1))

    @cached_property
    def l_edges(self) -> list[Segment]:
        """Maximal mesh segments, tagged ``boundary``, ``t`` or ``interior``."""
        out = []
        for axis in ("h", "v"):
            for pos, lo, hi, inner in self._segments_on(axis):
                seg = Segment(axis, pos, lo, hi, tuple(inner))
                if self._on_boundary_line(axis, pos):
                    kind = "boundary"
                elif (
                    self.vertices[seg.start] == T_JUNCTION
                    and self.vertices[seg.end] == T_JUNCTION
                ):
                    kind = "t"
                else:
                    kind = "interior"
                out.append(Segment(axis, pos, lo, hi, tuple(inner), kind))
        return out

    @cached_property
    def c_edges(self) -> list[Segment]:
        """Maximal interior segments whose inner vertices are all T-junctions.

        Only segments with at least one inner vertex are reported, which is
        the case that needs special treatment during basis construction.
        """
        out = []
        for e in self.l_edges:
            if e.kind == "boundary":
                continue
            pts = [e.lo, *e.inner, e.hi]
            start = 0
            for k in range(1, len(pts)):
                is_cross = self.vertices[e.point(pts[k])] == CROSSING
                if is_cross or k == len(pts) - 1:
                    piece = pts[start : k + 1]
                    if len(piece) > 2:
                        out.append(Segment(e.axis, e.pos, piece[0], piece[-1], tuple(piece[1:-1]), "c"))
                    start = k
        return out

    @cached_property
    def contacts(self) -> dict[str, dict[str, list[Contact]]]:
        """Edge-sharing neighbours per cell and side, with overlap intervals."""
        out: dict[str, dict[str, list[Contact]]] = {
            cid: {s: [] for s in SIDES} for cid in self.cells
        }
        # vertical sides
        for axis in ("v", "h"):
            low_side: dict[int, list] = {}  # cells whose low side lies on pos
            high_side: dict[int, list] = {}
            for c in self.cells.values():
                if axis == "v":
                    low_side.setdefault(c.x0, []).append((c.y0, c.y1, c.id))
                    high_side.setdefault(c.x1, []).append((c.y0, c.y1, c.id))
                else:
                    low_side.setdefault(c.y0, []).append((c.x0, c.x1, c.id))
                    high_side.setdefault(c.y1, []).append((c.x0, c.x1, c.id))
            s_low, s_high = (WEST, EAST) if axis == "v" else (SOUTH, NORTH)
            for pos, lows in low_side.items():
                highs = high_side.get(pos)
                if not highs:
                    continue
                lows.sort()
                highs.sort()
                i = j = 0
                while i < len(lows) and j < len(highs):
                    a0, a1, aid = lows[i]
                    b0, b1, bid = highs[j]
                    lo, hi = max(a0, b0), min(a1, b1)
                    if lo < hi:
                        # ``aid`` sits on the high side of the line: its low side touches ``bid``
                        out[aid][s_low].append(Contact(bid, lo, hi))
                        out[bid][s_high].append(Contact(aid, lo, hi))
                    if a1 <= b1:
                        i += 1
                    else:
                        j += 1
        return out

    def neighbours(self, cid: str) -> set[str]:
        return {ct.neighbour for side in SIDES for ct in self.contacts[cid][side]}

    def on_boundary(self, cid: str) -> dict[str, bool]:
        """Which sides of a cell lie on the boundary of the box."""
        c = self.cells[cid]
        bx0, bx1, by0, by1 = self.box
        return {WEST: c.x0 == bx0, EAST: c.x1 == bx1, SOUTH: c.y0 == by0, NORTH: c.y1 == by1}

    def is_boundary_cell(self, cid: str) -> bool:
        return any(self.on_boundary(cid).values())

    @cached_property
    def cells_at_vertex(self) -> dict[tuple[int, int], list[str]]:
        """Cells whose closed rectangle contains each vertex."""
        out: dict[tuple[int, int], list[str]] = {p: [] for p in self.vertices}
        by_y, by_x = self._vertices_on_lines
        for c in self.cells.values():
            found = set(c.corners)
            for y in (c.y0, c.y1):
                xs = by_y.get(y, [])
                found.update((x, y) for x in xs[bisect.bisect_left(xs, c.x0) : bisect.bisect_right(xs, c.x1)])
            for x in (c.x0, c.x1):
                ys = by_x.get(x, [])
                found.update((x, y) for y in ys[bisect.bisect_left(ys, c.y0) : bisect.bisect_right(ys, c.y1)])
            for p in found:
                out[p].append(c.id)
        for p in out:
            out[p].sort()
        return out

    def cells_with_corner(self, p: tuple[int, int]) -> list[str]:
        return [cid for cid in self.cells_at_vertex.get(p, []) if p in self.cells[cid].corners]

    def vertices_of_cell(self, cid: str) -> list[tuple[int, int]]:
        """All vertices on the closed boundary of a cell, corners included."""
        c = self.cells[cid]
        by_y, by_x = self._vertices_on_lines
        found = set(c.corners)
        for y in (c.y0, c.y1):
            xs = by_y.get(y, [])
            found.update((x, y) for x in xs[bisect.bisect_left(xs, c.x0) : bisect.bisect_right(xs, c.x1)])
        for x in (c.x0, c.x1):
            ys = by_x.get(x, [])
            found.update((x, y) for y in ys[bisect.bisect_left(ys, c.y0) : bisect.bisect_right(ys, c.y1)])
        return sorted(found)

    @cached_property
    def _level0_buckets(self) -> dict[tuple[int, int], list[str]]:
        out: dict[tuple[int, int], list[str]] = {}
        for c in self.cells.values():
            key = (c.x0 // SCALE, c.y0 // SCALE)
            out.setdefault(key, []).append(c.id)
        return out

    def cells_near(self, c: Cell) -> list[Cell]:
        out = []
        for i in range(c.x0 // SCALE - 1, (c.x1 - 1) // SCALE + 2):
            for j in range(c.y0 // SCALE - 1, (c.y1 - 1) // SCALE + 2):
                out.extend(self.cells[k] for k in self._level0_buckets.get((i, j), []))
        return out

    def locate_ticks(self, p: tuple[int, int]) -> str:
        """Id of a cell whose closed rectangle contains the tick point."""
        for i in (p[0] // SCALE, p[0] // SCALE - 1):
            for j in (p[1] // SCALE, p[1] // SCALE - 1):
                for cid in self._level0_buckets.get((i, j), []):
                    if self.cells[cid].contains_point(p):
                        return cid
        raise MeshError(f"point {p} outside the mesh")

    def summary(self) -> dict:
        kinds = list(self.vertices.values())
        return {
            "cells": len(self.cells),
            "vertices": len(kinds),
            "crossing": kinds.count(CROSSING),
            "t_junctions": kinds.count(T_JUNCTION),
            "boundary_vertices": kinds.count(BOUNDARY),
            "max_level": max(c.level for c in self.cells.values()),
        }


# --------------------------------------------------------------------- helpers
def _ticks_to_real(t, knots: np.ndarray, first: int):
    if isinstance(t, (int, np.integer)):
        seg, rem = divmod(int(t), SCALE)
        k = seg - first
        if k == len(knots) - 1 and rem == 0:
            return float(knots[k])
        return float(knots[k] + (knots[k + 1] - knots[k]) * (rem / SCALE))
    arr = np.asarray(t, dtype=np.int64)
    seg = np.minimum(arr // SCALE - first, len(knots) - 2)
    frac = (arr - (seg + first) * SCALE) / SCALE
    return knots[seg] + (knots[seg + 1] - knots[seg]) * frac


def _parse_axis(s: str | int) -> int:
    if isinstance(s, int):
        return s * SCALE
    m = re.fullmatch(r"(-?\d+)(?:\+(\d+)/(\d+))?", s.strip())
    if not m:
        raise MeshError(f"bad axis coordinate {s!r}")
    seg = int(m.group(1))
    if m.group(2) is None:
        return seg * SCALE
    num, den = int(m.group(2)), int(m.group(3))
    if den & (den - 1) or den > SCALE or num >= den:
        raise MeshError(f"bad axis coordinate {s!r}")
    return seg * SCALE + num * (SCALE // den)


def _valid_path(p: str) -> bool:
    head, *rest = p.split("/")
    return bool(_PATH_ROOT.match(head)) and all(q in ("q0", "q1", "q2", "q3") for q in rest)


def real_to_ticks(mesh: HierarchicalTMesh, x: float, y: float) -> tuple[float, float]:
    """Continuous knot-index position of a real point (used for location)."""
    return (
        _real_to_index(x, mesh.x_knots, mesh.x_first) * SCALE,
        _real_to_index(y, mesh.y_knots, mesh.y_first) * SCALE,
    )


def _real_to_index(v, knots: np.ndarray, first: int):
    arr = np.asarray(v, dtype=float)
    k = np.clip(np.searchsorted(knots, arr, side="right") - 1, 0, len(knots) - 2)
    return first + k + (arr - knots[k]) / (knots[k + 1] - knots[k])


# ------------------------------------------------------------ mesh operations
def new_mesh(x_knots: Sequence[float], y_knots: Sequence[float]) -> HierarchicalTMesh:
    return HierarchicalTMesh.tensor(x_knots, y_knots)


def subdivide(mesh: HierarchicalTMesh, cell_id: str) -> HierarchicalTMesh:
    return mesh.subdivide(cell_id)


def removable_edges(mesh: HierarchicalTMesh) -> list[Segment]:
    """T-l-edges that can be deleted without changing the spline space.

    These are T-l-edges with at most one interior vertex, that vertex being a
    crossing.  A T-junction on the edge would leave a dangling line behind,
    so such edges are never removed.
    """
    out = []
    for e in mesh.l_edges:
        if e.kind != "t" or len(e.inner) > 1:
            continue
        if all(mesh.vertices[e.point(s)] == CROSSING for s in e.inner):
            out.append(e)
    return out


def remove_edge(mesh: HierarchicalTMesh, e: Segment) -> HierarchicalTMesh:
    """Delete one removable l-edge, merging the cell pairs across it."""
    lo_cells: dict[tuple[int, int], Cell] = {}
    hi_cells: dict[tuple[int, int], Cell] = {}
    for c in mesh.cells.values():
        if e.axis == "v":
            if e.lo <= c.y0 and c.y1 <= e.hi:
                if c.x1 == e.pos:
                    lo_cells[(c.y0, c.y1)] = c
                elif c.x0 == e.pos:
                    hi_cells[(c.y0, c.y1)] = c
        else:
            if e.lo <= c.x0 and c.x1 <= e.hi:
                if c.y1 == e.pos:
                    lo_cells[(c.x0, c.x1)] = c
                elif c.y0 == e.pos:
                    hi_cells[(c.x0, c.x1)] = c
    if set(lo_cells) != set(hi_cells) or not lo_cells:
        raise MeshError("edge cannot be removed: cells across it do not pair up")
    removed = set()
    merged = []
    for key, a in lo_cells.items():
        b = hi_cells[key]
        removed.update((a.id, b.id))
        if e.axis == "v":
            r = (a.x0, b.x1, a.y0, a.y1)
        else:
            r = (a.x0, a.x1, a.y0, b.y1)
        merged.append(Cell(_merged_id(r), *r, level_of_rect(*r)))
    cells = [c for c in mesh.cells.values() if c.id not in removed] + merged
    return HierarchicalTMesh(
        mesh.x_knots, mesh.y_knots, cells, None, mesh.x_first, mesh.y_first, mesh.domain
    )


def _merged_id(r: tuple[int, int, int, int]) -> str:
    x0, x1, y0, y1 = (str(AxisCoord.from_ticks(t)) for t in r)
    return f"R[{x0},{x1}]x[{y0},{y1}]"


def simplify(mesh: HierarchicalTMesh, trace: list | None = None) -> HierarchicalTMesh:
    """Remove removable T-l-edges until none is left.

    Edges are removed in rounds; in each round a set of pairwise disjoint
    candidates (taken in lexicographic order) is deleted.  ``trace``, when
    given, receives the removed segments in order.
    """
    current = mesh
    while True:
        cands = sorted(
            removable_edges(current), key=lambda e: (e.axis, e.pos, e.lo, e.hi)
        )
        if not cands:
            return current
        chosen: list[Segment] = []
        for e in cands:
            if not any(e.touches(o) for o in chosen):
                chosen.append(e)
        for e in chosen:
            current = remove_edge(current, e)
            if trace is not None:
                trace.append(e)


def extend(mesh: HierarchicalTMesh, spacing: tuple[float, float, float, float] | None = None) -> HierarchicalTMesh:
    """Boundary extension: two collar layers on every side.

    Every boundary vertex is continued straight out through both layers, and
    the collar lines run all the way around.  ``spacing`` gives the collar
    widths (west, east, south, north); by default each equals the adjacent
    level-0 knot interval.  Original cell ids are kept.
    """
    xk, yk = mesh.x_knots, mesh.y_knots
    if spacing is None:
        spacing = (xk[1] - xk[0], xk[-1] - xk[-2], yk[1] - yk[0], yk[-1] - yk[-2])
    hw, he, hs, hn = spacing
    new_x = np.concatenate([[xk[0] - 2 * hw, xk[0] - hw], xk, [xk[-1] + he, xk[-1] + 2 * he]])
    new_y = np.concatenate([[yk[0] - 2 * hs, yk[0] - hs], yk, [yk[-1] + hn, yk[-1] + 2 * hn]])
    bx0, bx1, by0, by1 = mesh.box
    xs_on_bottom = sorted({p[0] for p in mesh.vertices if p[1] == by0})
    xs_on_top = sorted({p[0] for p in mesh.vertices if p[1] == by1})
    ys_on_left = sorted({p[1] for p in mesh.vertices if p[0] == bx0})
    ys_on_right = sorted({p[1] for p in mesh.vertices if p[0] == bx1})
    cells = list(mesh.cells.values())

    def strip(breaks, layers, horizontal, tag):
        for layer, (a, b) in enumerate(layers):
            for k in range(len(breaks) - 1):
                s0, s1 = breaks[k], breaks[k + 1]
                r = (s0, s1, a, b) if horizontal else (a, b, s0, s1)
                cells.append(Cell(f"X:{tag}{layer}:{_merged_id(r)[1:]}", *r, level_of_rect(*r)))

    S = SCALE
    strip(xs_on_bottom, [(by0 - 2 * S, by0 - S), (by0 - S, by0)], True, "S")
    strip(xs_on_top, [(by1 + S, by1 + 2 * S), (by1, by1 + S)], True, "N")
    strip(ys_on_left, [(bx0 - 2 * S, bx0 - S), (bx0 - S, bx0)], False, "W")
    strip(ys_on_right, [(bx1 + S, bx1 + 2 * S), (bx1, bx1 + S)], False, "E")
    # 2x2 corner blocks
    for cx in ((bx0 - 2 * S, bx0 - S), (bx0 - S, bx0), (bx1, bx1 + S), (bx1 + S, bx1 + 2 * S)):
        for cy in ((by0 - 2 * S, by0 - S), (by0 - S, by0), (by1, by1 + S), (by1 + S, by1 + 2 * S)):
            r = (cx[0], cx[1], cy[0], cy[1])
            cells.append(Cell(f"X:C:{_merged_id(r)[1:]}", *r, 0))
    return HierarchicalTMesh(
        new_x, new_y, cells, None, mesh.x_first - 2, mesh.y_first - 2, domain=mesh.box
    )


def random_mesh(
    rng: np.random.Generator,
    n_range: tuple[int, int] = (2, 5),
    max_level: int = 3,
    p_split: float = 0.4,
    integer_knots: bool = True,
) -> HierarchicalTMesh:
    """Random hierarchical mesh: each leaf splits with ``p_split`` per level."""
    nx = int(rng.integers(n_range[0], n_range[1] + 1))
    ny = int(rng.integers(n_range[0], n_range[1] + 1))
    if integer_knots:
        xk = np.arange(nx + 1, dtype=float)
        yk = np.arange(ny + 1, dtype=float)
    else:
        xk = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 2.0, nx))])
        yk = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 2.0, ny))])
    mesh = HierarchicalTMesh.tensor(xk, yk)
    for level in range(max_level):
        ids = sorted(c.id for c in mesh.cells.values() if c.level == level)
        pick = [cid for cid in ids if rng.random() < p_split]
        mesh = mesh.subdivide_many(pick)
    return mesh


def locate_points(mesh: HierarchicalTMesh, x, y) -> np.ndarray:
    """Index into ``mesh.sorted_cells()`` of a cell containing each real point.

    Points outside the box get -1.  Points on shared edges go to one of the
    adjacent cells (any choice is fine for continuous functions).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    X = _real_to_index(x, mesh.x_knots, mesh.x_first) * SCALE
    Y = _real_to_index(y, mesh.y_knots, mesh.y_first) * SCALE
    out = np.full(len(x), -1, dtype=np.int64)
    xk, yk = mesh.x_knots, mesh.y_knots
    eps = 1e-12 * max(xk[-1] - xk[0], yk[-1] - yk[0])
    inside = (x >= xk[0] - eps) & (x <= xk[-1] + eps) & (y >= yk[0] - eps) & (y <= yk[-1] + eps)
    order = mesh.sorted_cells()
    pos = {c.id: i for i, c in enumerate(order)}
    bi = np.clip(np.floor(X / SCALE).astype(np.int64), mesh.x_first, mesh.x_first + len(xk) - 2)
    bj = np.clip(np.floor(Y / SCALE).astype(np.int64), mesh.y_first, mesh.y_first + len(yk) - 2)
    keys = (bi - mesh.x_first) * len(yk) + (bj - mesh.y_first)
    for key in np.unique(keys[inside]):
        sel = np.nonzero(inside & (keys == key))[0]
        i = int(key // len(yk)) + mesh.x_first
        j = int(key % len(yk)) + mesh.y_first
        px, py = X[sel], Y[sel]
        for cid in mesh._level0_buckets.get((i, j), []):
            c = mesh.cells[cid]
            hit = (px >= c.x0) & (px <= c.x1) & (py >= c.y0) & (py <= c.y1)
            out[sel[hit & (out[sel] < 0)]] = pos[cid]
        # snap points that fell through due to rounding
        lost = sel[out[sel] < 0]
        for q in lost:
            best = min(
                mesh._level0_buckets.get((i, j), []),
                key=lambda k: _dist_rect(mesh.cells[k], X[q], Y[q]),
            )
            out[q] = pos[best]
    return out


def _dist_rect(c: Cell, X: float, Y: float) -> float:
    dx = max(c.x0 - X, 0.0, X - c.x1)
    dy = max(c.y0 - Y, 0.0, Y - c.y1)
    return dx + dy
