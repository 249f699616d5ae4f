"""Biquadratic patches in Bernstein form and C1 continuity on a T-mesh.

A spline is stored cell by cell as a 3x3 array of B-ordinates ``b[j, k]``
attached to the domain points ``(x0 + j*hx/2, y0 + k*hy/2)``; ``j`` runs
along x and ``k`` along y.  Cells missing from the dictionary are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .kernels import eval_patches
from .mesh import EAST, NORTH, SIDES, SOUTH, WEST, HierarchicalTMesh, locate_points

Rect = tuple[float, float, float, float]  # (x0, x1, y0, y1)
_ZERO = np.zeros((3, 3))


class BnetError(ValueError):
    """Raised when B-net data is inconsistent (e.g. ambiguous phi values)."""


def bernstein2(t):
    """Quadratic Bernstein values at ``t`` (last axis of the result)."""
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    return np.stack([s * s, 2.0 * s * t, t * t], axis=-1)


def bernstein2_deriv(t):
    """Derivatives of the quadratic Bernstein polynomials on ``[0, 1]``."""
    t = np.asarray(t, dtype=float)
    return np.stack([-2.0 * (1.0 - t), 2.0 - 4.0 * t, 2.0 * t], axis=-1)


def eval_patch(b: np.ndarray, rect: Rect, x, y):
    """Evaluate one patch at real points (no bounds check)."""
    x0, x1, y0, y1 = rect
    bu = bernstein2((np.asarray(x) - x0) / (x1 - x0))
    bv = bernstein2((np.asarray(y) - y0) / (y1 - y0))
    return np.einsum("...j,jk,...k->...", bu, b, bv)


def blossom_matrix(a0, a1, c0, c1) -> np.ndarray:
    """Matrix taking quadratic Bernstein coefficients on [a0,a1] to [c0,c1].

    Works with floats or :class:`fractions.Fraction` inputs; in the latter
    case the result is an exact object array.
    """
    exact = all(isinstance(v, (Fraction, int)) for v in (a0, a1, c0, c1))
    u0 = (c0 - a0) / (a1 - a0) if not exact else Fraction(c0 - a0) / (a1 - a0)
    u1 = (c1 - a0) / (a1 - a0) if not exact else Fraction(c1 - a0) / (a1 - a0)
    rows = []
    for u, w in ((u0, u0), (u0, u1), (u1, u1)):
        rows.append([(1 - u) * (1 - w), (1 - u) * w + u * (1 - w), u * w])
    return np.array(rows, dtype=object if exact else float)


def _check_rect(r: Rect) -> None:
    if not (r[1] > r[0] and r[3] > r[2]):
        raise BnetError(f"degenerate rectangle {r}")


def reexpress(b: np.ndarray, src: Rect, dst: Rect) -> np.ndarray:
    """B-ordinates over ``dst`` of the polynomial given by ``b`` over ``src``.

    With :class:`fractions.Fraction` bounds and ordinates the change of basis
    is exact.
    """
    _check_rect(src)
    _check_rect(dst)
    mx = blossom_matrix(src[0], src[1], dst[0], dst[1])
    my = blossom_matrix(src[2], src[3], dst[2], dst[3])
    return mx @ b @ my.T


def reexpress_operator(src: Rect, dst: Rect) -> np.ndarray:
    """9x9 matrix of :func:`reexpress` acting on row-major flattened nets."""
    mx = blossom_matrix(src[0], src[1], dst[0], dst[1])
    my = blossom_matrix(src[2], src[3], dst[2], dst[3])
    return np.kron(mx, my)


def near_rows(b: np.ndarray, side: str) -> np.ndarray:
    """The two rows of ordinates closest to ``side``, nearest first.

    The result has shape (2, 3): index 0 is the row on the edge itself.
    """
    if side == WEST:
        return b[[0, 1], :]
    if side == EAST:
        return b[[2, 1], :]
    if side == SOUTH:
        return b[:, [0, 1]].T
    if side == NORTH:
        return b[:, [2, 1]].T
    raise ValueError(side)


def near_index(side: str) -> list[int]:
    """Flat indices (row-major ``j*3+k``) of :func:`near_rows`."""
    idx = np.arange(9).reshape(3, 3)
    return near_rows(idx, side).ravel().tolist()


def propagate_c1(b_src: np.ndarray, rect_src: Rect, side: str, rect_dst: Rect) -> np.ndarray:
    """Two rows of the neighbour across ``side`` of the source cell.

    C1 contact along an edge fixes the trace and the cross derivative, and
    those determine exactly the two ordinate rows next to the edge.  The
    neighbour's edge must lie inside the source edge.
    """
    _check_rect(rect_src)
    _check_rect(rect_dst)
    sx0, sx1, sy0, sy1 = rect_src
    dx0, dx1, dy0, dy1 = rect_dst
    if side in (WEST, EAST):
        on_edge = dx1 == sx0 if side == WEST else dx0 == sx1
        inside = sy0 <= dy0 and dy1 <= sy1
    else:
        on_edge = dy1 == sy0 if side == SOUTH else dy0 == sy1
        inside = sx0 <= dx0 and dx1 <= sx1
    if not (on_edge and inside):
        raise BnetError(f"{rect_dst} does not sit on the {side} side of {rect_src}")
    full = reexpress(b_src, rect_src, rect_dst)
    return near_rows(full, _opposite(side))


def _opposite(side: str) -> str:
    return {WEST: EAST, EAST: WEST, SOUTH: NORTH, NORTH: SOUTH}[side]


def contact_rect(mesh: HierarchicalTMesh, cid: str, side: str, lo: int, hi: int) -> Rect:
    """Real rectangle spanning the contact segment with the cell's own width."""
    x0, x1, y0, y1 = mesh.real_rect(cid)
    if side in (WEST, EAST):
        return (x0, x1, mesh.y_real(lo), mesh.y_real(hi))
    return (mesh.x_real(lo), mesh.x_real(hi), y0, y1)


def c1_pair_operator(mesh: HierarchicalTMesh, a: str, side: str, lo: int, hi: int, b: str | None):
    """Linear maps (6x9 each) whose difference vanishes iff C1 holds on a contact.

    ``b`` is the neighbour across ``side`` of ``a`` or ``None`` for a zero
    neighbour (boundary under homogeneous conditions, or outside a support).
    """
    rect = contact_rect(mesh, a, side, lo, hi)
    pa = reexpress_operator(mesh.real_rect(a), rect)[near_index(side)]
    if b is None:
        return pa, None
    pb = reexpress_operator(mesh.real_rect(b), rect)[near_index(side)]
    return pa, pb


@dataclass
class BNetSpline:
    """Piecewise biquadratic function on a T-mesh given by its B-net."""

    mesh: HierarchicalTMesh
    nets: dict[str, np.ndarray] = field(default_factory=dict)
    hbc: bool = True

    def net(self, cid: str) -> np.ndarray:
        if cid not in self.mesh.cells:
            raise KeyError(cid)
        return self.nets.get(cid, np.zeros((3, 3)))

    def domain_points(self, cid: str) -> np.ndarray:
        """Array (3, 3, 2) of the domain points of a cell."""
        return domain_points(self.mesh.real_rect(cid))

    def __call__(self, x, y):
        return eval_spline(self, x, y)

    def support(self) -> list[str]:
        return sorted(self.nets)

    def to_dict(self) -> dict:
        return {"hbc": self.hbc, "cells": [[cid, np.asarray(self.nets[cid]).ravel().tolist()] for cid in sorted(self.nets)]}


def patch_arrays(mesh: HierarchicalTMesh) -> tuple[list[str], np.ndarray]:
    """Cell order of :func:`locate_points` and the matching real rectangles."""
    order = [c.id for c in mesh.sorted_cells()]
    rects = np.array([mesh.real_rect(cid) for cid in order], dtype=float).reshape(-1, 4)
    return order, rects


def eval_spline(f: BNetSpline, x, y) -> np.ndarray:
    """Evaluate at real points; points outside the domain give 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    order, rects = patch_arrays(f.mesh)
    idx = locate_points(f.mesh, x, y)
    nets = np.array([f.nets.get(cid, _ZERO) for cid in order], dtype=float).reshape(-1, 3, 3)
    return eval_patches(np.ascontiguousarray(nets), np.ascontiguousarray(rects), idx, np.ascontiguousarray(x), np.ascontiguousarray(y))


def domain_points(rect: Rect) -> np.ndarray:
    x0, x1, y0, y1 = rect
    xs = np.array([x0, 0.5 * (x0 + x1), x1])
    ys = np.array([y0, 0.5 * (y0 + y1), y1])
    return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)


def _patch_value_and_normal(b: np.ndarray, rect: Rect, side: str, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Value and derivative normal to ``side`` at points along that side."""
    x0, x1, y0, y1 = rect
    if side in (WEST, EAST):
        u = np.full_like(pts, 0.0 if side == WEST else 1.0)
        v = (pts - y0) / (y1 - y0)
        val = np.einsum("pj,jk,pk->p", bernstein2(u), b, bernstein2(v))
        der = np.einsum("pj,jk,pk->p", bernstein2_deriv(u), b, bernstein2(v)) / (x1 - x0)
    else:
        u = (pts - x0) / (x1 - x0)
        v = np.full_like(pts, 0.0 if side == SOUTH else 1.0)
        val = np.einsum("pj,jk,pk->p", bernstein2(u), b, bernstein2(v))
        der = np.einsum("pj,jk,pk->p", bernstein2(u), b, bernstein2_deriv(v)) / (y1 - y0)
    return val, der


def chebyshev_points(lo: float, hi: float, n: int = 5) -> np.ndarray:
    """Chebyshev-Lobatto points on ``[lo, hi]`` (end points included)."""
    t = 0.5 - 0.5 * np.cos(np.pi * np.arange(n) / (n - 1))
    return lo + (hi - lo) * t


def check_c1(spline: BNetSpline, tol: float = 1e-9, npts: int = 5) -> tuple[bool, float, list[tuple[str, str]]]:
    """Sample-based C1 check on every interior contact (and the boundary for HBC).

    Value and normal derivative of both patches are compared at ``npts``
    Chebyshev points of every shared edge segment.  Derivatives are scaled
    by the smaller cell width normal to the edge, and all defects are taken
    relative to the largest ordinate, so ``tol`` is an absolute tolerance on
    ordinates normalized to ``max |b| = 1``.  For HBC splines the boundary
    sides are compared against the zero function.

    Returns ``(ok, worst_defect, violating_pairs)``; a boundary violation is
    reported as ``(cell, "boundary")``.
    """
    mesh = spline.mesh
    scale = max((float(np.max(np.abs(v))) for v in spline.nets.values()), default=0.0)
    scale = max(scale, 1.0)
    worst = 0.0
    bad: list[tuple[str, str]] = []
    active = set(spline.nets)
    for cid in sorted(mesh.cells):
        ra = mesh.real_rect(cid)
        bnd = mesh.on_boundary(cid) if spline.hbc else {}
        for side in SIDES:
            if bnd.get(side) and cid in active:
                lo, hi = (ra[2], ra[3]) if side in (WEST, EAST) else (ra[0], ra[1])
                w = ra[1] - ra[0] if side in (WEST, EAST) else ra[3] - ra[2]
                val, der = _patch_value_and_normal(spline.nets[cid], ra, side, chebyshev_points(lo, hi, npts))
                d = max(float(np.max(np.abs(val))), float(np.max(np.abs(der))) * w) / scale
                worst = max(worst, d)
                if d > tol:
                    bad.append((cid, "boundary"))
            for ct in mesh.contacts[cid][side]:
                nb = ct.neighbour
                if nb < cid or (cid not in active and nb not in active):
                    continue
                rb = mesh.real_rect(nb)
                if side in (WEST, EAST):
                    lo, hi = mesh.y_real(ct.lo), mesh.y_real(ct.hi)
                    w = min(ra[1] - ra[0], rb[1] - rb[0])
                else:
                    lo, hi = mesh.x_real(ct.lo), mesh.x_real(ct.hi)
                    w = min(ra[3] - ra[2], rb[3] - rb[2])
                pts = chebyshev_points(lo, hi, npts)
                va, da = _patch_value_and_normal(spline.net(cid), ra, side, pts)
                vb, db = _patch_value_and_normal(spline.net(nb), rb, _opposite(side), pts)
                d = max(float(np.max(np.abs(va - vb))), float(np.max(np.abs(da - db))) * w) / scale
                worst = max(worst, d)
                if d > tol:
                    bad.append((cid, nb))
    return (not bad, worst, bad)


def center_ordinate(b: np.ndarray) -> float:
    """The mapping functional of a single patch: its centre ordinate."""
    return float(np.asarray(b)[1, 1])


def from_polynomial(mesh: HierarchicalTMesh, coeffs: Mapping[tuple[int, int], float], hbc: bool = False) -> BNetSpline:
    """B-net of a global polynomial ``sum c_ij x^i y^j`` with ``i, j <= 2``."""
    nets = {}
    for cid in mesh.cells:
        rect = mesh.real_rect(cid)
        pts = domain_points(rect)
        vals = np.zeros((3, 3))
        for (i, j), c in coeffs.items():
            vals += c * pts[..., 0] ** i * pts[..., 1] ** j
        # B-ordinates from values at the 3x3 domain points
        nets[cid] = _interp_to_bernstein(vals)
    return BNetSpline(mesh, nets, hbc=hbc)


# values at t = 0, 1/2, 1 of the Bernstein basis, inverted
_B_AT_NODES = bernstein2(np.array([0.0, 0.5, 1.0]))
_B_AT_NODES_INV = np.linalg.inv(_B_AT_NODES)


def _interp_to_bernstein(vals: np.ndarray) -> np.ndarray:
    return _B_AT_NODES_INV @ vals @ _B_AT_NODES_INV.T
