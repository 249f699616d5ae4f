"""Quadratic C1 splines on a knot vector: the one-dimensional mirror.

Everything here works with floats or with :class:`fractions.Fraction`
knots; in the latter case all ordinates are exact.

A spline is stored per interval as the triple ``(b0, b1, b2)`` of
B-ordinates attached to the interval's left end, midpoint and right end.
The mapping to piecewise constants reads ``b1`` of each interval.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


class KnotError(ValueError):
    """Knots are not strictly increasing or too few."""


@dataclass(frozen=True)
class KnotVector:
    """Strictly increasing knots ``t_0 < ... < t_n``."""

    knots: tuple

    def __post_init__(self) -> None:
        if len(self.knots) < 2:
            raise KnotError("need at least two knots")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise KnotError("knots must be strictly increasing")

    @classmethod
    def of(cls, knots: Sequence) -> "KnotVector":
        return cls(tuple(knots))

    @property
    def n(self) -> int:
        """Number of intervals."""
        return len(self.knots) - 1

    @property
    def c_knots(self) -> tuple:
        """Interior knots ``t_1 .. t_{n-1}``."""
        return self.knots[1:-1]

    def extended(self) -> "KnotVector":
        """Two extra knots at each end, spaced like the adjacent end interval."""
        t = self.knots
        h0 = t[1] - t[0]
        h1 = t[-1] - t[-2]
        return KnotVector((t[0] - 2 * h0, t[0] - h0) + tuple(t) + (t[-1] + h1, t[-1] + 2 * h1))


@dataclass
class QuadSpline1D:
    """Quadratic spline over a knot vector, zero on intervals not listed."""

    knots: KnotVector
    ords: dict[int, tuple] = field(default_factory=dict)

    def support(self) -> tuple:
        if not self.ords:
            return ()
        lo, hi = min(self.ords), max(self.ords)
        return (self.knots.knots[lo], self.knots.knots[hi + 1])

    def interval_of(self, x: float) -> int:
        """Index of the interval containing ``x`` (right end goes to the last)."""
        t = np.asarray(self.knots.knots, dtype=float)
        return int(np.clip(np.searchsorted(t, x, side="right") - 1, 0, self.knots.n - 1))

    def __call__(self, x):
        return self._eval(x, deriv=False)

    def derivative(self, x):
        return self._eval(x, deriv=True)

    def _eval(self, x, deriv: bool):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.asarray(self.knots.knots, dtype=float)
        out = np.zeros_like(xs)
        idx = np.clip(np.searchsorted(t, xs, side="right") - 1, 0, self.knots.n - 1)
        inside = (xs >= t[0]) & (xs <= t[-1])
        for i, (b0, b1, b2) in self.ords.items():
            sel = inside & (idx == i)
            if not np.any(sel):
                continue
            h = t[i + 1] - t[i]
            u = (xs[sel] - t[i]) / h
            b0, b1, b2 = float(b0), float(b1), float(b2)
            if deriv:
                out[sel] = (2 * (1 - u) * (b1 - b0) + 2 * u * (b2 - b1)) / h
            else:
                out[sel] = (1 - u) ** 2 * b0 + 2 * u * (1 - u) * b1 + u * u * b2
        return out if np.ndim(x) else float(out[0])

    def restrict(self, knots: KnotVector, offset: int) -> "QuadSpline1D":
        """Restriction to a sub-vector starting at interval ``offset``."""
        ords = {i - offset: b for i, b in self.ords.items() if 0 <= i - offset < knots.n}
        return QuadSpline1D(knots, ords)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["interval", "b0", "b1", "b2"])
        for i in sorted(self.ords):
            w.writerow([i, *(float(v) for v in self.ords[i])])
        return buf.getvalue()


def bump_ordinates(t0, t1, t2, t3) -> dict[int, tuple]:
    """B-ordinates of the bump with ``b1 = 1`` on ``[t1, t2]``.

    The left neighbour interval ``[t0, t1]`` and the right one ``[t2, t3]``
    have ``b1 = 0``.  C1 at ``t1`` puts ``(t1, b)`` on the line through the
    two midpoint ordinates, which gives ``b = (t1 - t0)/(t2 - t0)``; at
    ``t2`` the same argument gives ``(t2 - t1)/(t1 - t3) + 1``.
    """
    left = (t1 - t0) / (t2 - t0)
    right = (t2 - t1) / (t1 - t3) + 1
    return {0: (0 * left, 0 * left, left), 1: (left, 1 + 0 * left, right), 2: (right, 0 * right, 0 * right)}


def build_basis_1d(knots: Sequence | KnotVector, restrict: bool = True) -> list[QuadSpline1D]:
    """Basis of C1 quadratic splines on ``[t_0, t_n]`` (``n + 2`` functions).

    The construction runs on the extended knot vector with zero end
    conditions: one bump per interval between consecutive C-knots of the
    extended vector.  With ``restrict`` the bumps are cut to the original
    intervals.
    """
    kv = knots if isinstance(knots, KnotVector) else KnotVector.of(knots)
    ext = kv.extended()
    t = ext.knots
    basis = []
    # C-knot intervals of the extended vector are [t_i, t_{i+1}], i = 1 .. n+2
    for i in range(1, ext.n - 1):
        local = bump_ordinates(t[i - 1], t[i], t[i + 1], t[i + 2])
        sp = QuadSpline1D(ext, {i - 1 + j: b for j, b in local.items()})
        basis.append(sp.restrict(kv, 2) if restrict else sp)
    return basis


def map_phi_1d(p: QuadSpline1D) -> dict[int, object]:
    """Piecewise constant image: ``b1`` on every interval between C-knots."""
    return {i: p.ords.get(i, (0, 0, 0))[1] for i in range(1, p.knots.n - 1)}


def is_c1(p: QuadSpline1D, tol: float = 1e-12, hbc: bool = False) -> bool:
    """Coefficient test of C1 at every interior knot (and zero ends for ``hbc``)."""
    t = p.knots.knots
    zero = (0, 0, 0)
    for i in range(1, p.knots.n):
        a = p.ords.get(i - 1, zero)
        b = p.ords.get(i, zero)
        h0, h1 = t[i] - t[i - 1], t[i + 1] - t[i]
        if abs(a[2] - b[0]) > tol:
            return False
        if abs((a[2] - a[1]) / h0 - (b[1] - b[0]) / h1) > tol * max(1, 1 / min(h0, h1)):
            return False
    if hbc:
        first, last = p.ords.get(0, zero), p.ords.get(p.knots.n - 1, zero)
        if max(abs(first[0]), abs(first[1]), abs(last[1]), abs(last[2])) > tol:
            return False
    return True


def collocation_matrix_1d(basis: list[QuadSpline1D], points) -> np.ndarray:
    return np.column_stack([b(np.asarray(points, dtype=float)) for b in basis])


def exact_knots(knots: Sequence) -> tuple[Fraction, ...]:
    """Knots as exact fractions (floats are converted by their binary value)."""
    return tuple(Fraction(k) for k in knots)
