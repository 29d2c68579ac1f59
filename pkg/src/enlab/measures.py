"""Signed measures on [0, T]: piecewise densities plus atoms.

Carrier for drifts and predictable brackets.  Density pieces declare their own
support intervals, which is what the structure-condition checker keys on: the
counterexample verdicts are support-mismatch decisions and must not depend on
quadrature error.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .paths import PiecewiseJumpPath
from .segments import AnalyticSegment, FunctionSegment, Segment, product

__all__ = [
    "RangeError",
    "DensityPiece",
    "PathMeasure",
    "Window",
    "DriftBracketPair",
    "integrate_path_measure",
]


class RangeError(ValueError):
    """Evaluation outside the measure's horizon."""


@dataclass(frozen=True)
class DensityPiece:
    lo: float
    hi: float
    density: Segment

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("density piece needs lo < hi")


@dataclass(frozen=True)
class PathMeasure:
    """Lebesgue part (disjoint density pieces) plus finitely many atoms."""

    horizon: float
    pieces: tuple[DensityPiece, ...] = ()
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        prev = -np.inf
        for p in self.pieces:
            if p.lo < prev - 1e-15:
                raise ValueError("density pieces must be sorted and disjoint")
            if p.hi > self.horizon + 1e-12:
                raise ValueError("density piece beyond horizon")
            prev = p.hi
        ts = [t for t, _ in self.atoms]
        if len(set(ts)) != len(ts):
            raise ValueError("atoms must sit at distinct times")
        if any(t < 0.0 or t > self.horizon for t in ts):
            raise ValueError("atom outside [0, horizon]")

    # -- support metadata ---------------------------------------------------

    def support_intervals(self) -> tuple[tuple[float, float], ...]:
        return tuple((p.lo, p.hi) for p in self.pieces)

    def atom_times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.atoms)

    def density_at(self, t: float) -> float:
        los = self.__dict__.get("_piece_los")
        if los is None:
            los = [p.lo for p in self.pieces]
            self.__dict__["_piece_los"] = los
        i = bisect.bisect_right(los, t) - 1
        if i >= 0:
            p = self.pieces[i]
            if p.lo <= t < p.hi:
                return float(p.density(t))
        return 0.0

    # -- integration --------------------------------------------------------

    def measure(self, lo: float, hi: float, absolute: bool = False) -> float:
        """Mass of (lo, hi]; with ``absolute`` the total-variation mass."""
        total = 0.0
        for p in self.pieces:
            a, b = max(p.lo, lo), min(p.hi, hi)
            if b > a:
                total += _piece_integral(p.density, a, b, absolute=absolute)
        for t, w in self.atoms:
            if lo < t <= hi:
                total += abs(w) if absolute else w
        return total

    def integrate_against(
        self, integrand: PiecewiseJumpPath, upto: float, absolute: bool = False
    ) -> float:
        """``int_0^t f(u-) dmu(u)``; atoms pick up the left limit of f."""
        if upto > self.horizon + 1e-12:
            raise RangeError(f"t={upto} beyond horizon {self.horizon}")
        total = 0.0
        cuts = [t for t in integrand.event_times if t <= upto]
        for p in self.pieces:
            a, b = p.lo, min(p.hi, upto)
            if b <= a:
                continue
            lo_i = bisect.bisect_right(cuts, a)
            pts = [a] + [t for t in cuts[lo_i:] if t < b] + [b]
            for x0, x1 in zip(pts[:-1], pts[1:]):
                seg = integrand.segments[integrand._segment_index(0.5 * (x0 + x1))]
                total += _piece_integral(
                    product(seg, p.density), x0, x1, absolute=absolute
                )
        for t, w in self.atoms:
            if t <= upto:
                contrib = integrand.left_limit(t) * w
                total += abs(contrib) if absolute else contrib
        return total

    def total_mass(self, absolute: bool = False) -> float:
        return self.measure(-1e-15, self.horizon, absolute=absolute)

    def restricted(self, lo: float, hi: float) -> "PathMeasure":
        """Restriction to the stochastic interval (lo, hi]."""
        pieces = []
        for p in self.pieces:
            a, b = max(p.lo, lo), min(p.hi, hi)
            if b > a:
                pieces.append(DensityPiece(a, b, p.density))
        atoms = tuple((t, w) for t, w in self.atoms if lo < t <= hi)
        return PathMeasure(self.horizon, tuple(pieces), atoms)


def _piece_integral(seg: Segment, lo: float, hi: float, absolute: bool = False) -> float:
    if not absolute:
        return seg.integral(lo, hi)
    # total-variation mass: when the density keeps one sign on the piece the
    # closed form applies; otherwise fall back to quadrature of |density|
    probe = np.asarray(seg(np.linspace(lo, hi, 9)))
    if np.all(probe >= 0.0) or np.all(probe <= 0.0):
        return abs(seg.integral(lo, hi))
    return FunctionSegment(lambda u: np.abs(seg(u))).integral(lo, hi)


def integrate_path_measure(
    integrand: PiecewiseJumpPath, measure: PathMeasure, t: float
) -> float:
    """Public entry: integral of the left-limit-evaluated path against mu."""
    if abs(integrand.horizon - measure.horizon) > 1e-9:
        raise ValueError("integrand and measure must share a horizon")
    return measure.integrate_against(integrand, t)


@dataclass(frozen=True)
class Window:
    """Stochastic interval carrying a drift/bracket pair.

    ``kind='stopped'`` is [0, tau]; ``kind='after'`` is (tau, horizon];
    ``kind='full'`` is the whole [0, horizon].
    """

    kind: str
    horizon: float
    tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("stopped", "after", "full"):
            raise ValueError(f"unknown window kind {self.kind!r}")
        if self.kind != "full" and self.tau is None:
            raise ValueError("stopped/after windows need tau")

    def bounds(self) -> tuple[float, float]:
        if self.kind == "stopped":
            return (0.0, float(self.tau))
        if self.kind == "after":
            return (float(self.tau), self.horizon)
        return (0.0, self.horizon)

    def overlaps(self, other: "Window") -> bool:
        a0, a1 = self.bounds()
        b0, b1 = other.bounds()
        return min(a1, b1) - max(a0, b0) > 1e-12


@dataclass(frozen=True)
class DriftBracketPair:
    """Finite-variation part and predictable bracket on a common window."""

    drift: PathMeasure
    bracket: PathMeasure
    window: Window

    def __post_init__(self):
        lo, hi = self.window.bounds()
        for m in (self.drift, self.bracket):
            for a, b in m.support_intervals():
                if a < lo - 1e-9 or b > hi + 1e-9:
                    raise ValueError("measure support escapes the window")
