"""Pathwise drifts and predictable brackets under the base and enlarged flows.

For Poisson-driven processes every bracket compensator is an absolutely
continuous measure with density ``rate * j1(u-) * j2(u-)`` where ``j`` is the
jump-size coefficient at an event; the martingale part of the survival
process m has jump coefficient ``gamma`` carried by the Azema triple.  The
weighted model's measures are exact poly-exp segments; the last-passage model
composes the tabulated ruin function and falls back to callable densities,
with the support intervals still computed exactly (and they are what the
structure-condition verdicts key on).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .measures import DensityPiece, DriftBracketPair, PathMeasure, Window
from .models import AzemaTriple, LastPassageModel, WeightedJumpTimeModel, drifted_level_path
from .paths import MarketModel, ModelError, PiecewiseJumpPath
from .segments import AnalyticSegment, FunctionSegment, Segment, constant, product

__all__ = [
    "InternalConsistencyError",
    "unit_coefficient_path",
    "region_above",
    "interval_difference",
    "f_brackets",
    "bracket_measure",
    "g_bracket_stopped",
    "g_drift_stopped",
    "g_drift_bracket_after",
    "jeulin_hat_path",
]


class InternalConsistencyError(RuntimeError):
    """Two evaluation routes of the same object disagree beyond tolerance."""


def unit_coefficient_path(horizon: float) -> PiecewiseJumpPath:
    """Constant-one jump coefficient (the raw compensated Poisson martingale)."""
    return PiecewiseJumpPath(horizon, 1.0, (), (), (constant(1.0),))


# ---------------------------------------------------------------------------
# interval machinery
# ---------------------------------------------------------------------------


def region_above(y: PiecewiseJumpPath, level: float) -> tuple[tuple[float, float], ...]:
    """Maximal intervals on which the pre-jump value of y exceeds ``level``.

    y rises continuously between events and drops at events, so the region is
    a union of [crossing-or-event, event-or-horizon] windows computed exactly.
    """
    out = []
    bounds = (0.0,) + y.event_times + (y.horizon,)
    open_start = None
    for i in range(len(bounds) - 1):
        s, e = bounds[i], bounds[i + 1]
        if e <= s:
            continue
        y0 = y.value(s)
        y_end = y.left_limit(e)
        if open_start is None:
            if y0 >= level:
                open_start = s
            elif y_end > level:
                slope = (y_end - y0) / (e - s)
                open_start = s + (level - y0) / slope
        else:
            if y0 < level:
                out.append((open_start, s))
                open_start = None
                if y_end > level:
                    slope = (y_end - y0) / (e - s)
                    open_start = s + (level - y0) / slope
    if open_start is not None:
        out.append((open_start, y.horizon))
    return tuple((a, b) for a, b in out if b > a)


def interval_difference(
    base: tuple[tuple[float, float], ...], minus: tuple[tuple[float, float], ...]
) -> tuple[tuple[float, float], ...]:
    out = []
    for lo, hi in base:
        segments = [(lo, hi)]
        for a, b in minus:
            nxt = []
            for s, e in segments:
                if b <= s or a >= e:
                    nxt.append((s, e))
                    continue
                if a > s:
                    nxt.append((s, a))
                if b < e:
                    nxt.append((b, e))
            segments = nxt
        out.extend(segments)
    return tuple((a, b) for a, b in sorted(out) if b - a > 0.0)


def intersect_intervals(
    xs: tuple[tuple[float, float], ...], lo: float, hi: float
) -> tuple[tuple[float, float], ...]:
    out = []
    for a, b in xs:
        s, e = max(a, lo), min(b, hi)
        if e > s:
            out.append((s, e))
    return tuple(out)


def _segment_on(path: PiecewiseJumpPath, lo: float, hi: float) -> list[tuple[float, float, Segment]]:
    """Path segments restricted to (lo, hi), split at the path's events."""
    cuts = [lo] + [t for t in path.event_times if lo < t < hi] + [hi]
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            out.append((a, b, path.segments[path._segment_index(0.5 * (a + b))]))
    return out


def _product_pieces(
    rate_scale: float,
    factors: list[PiecewiseJumpPath],
    intervals: tuple[tuple[float, float], ...],
    extra: Segment | None = None,
) -> tuple[DensityPiece, ...]:
    """Density pieces ``rate_scale * prod(factors)(u)`` on the intervals."""
    pieces = []
    for lo, hi in intervals:
        cuts = {lo, hi}
        for f in factors:
            cuts.update(t for t in f.event_times if lo < t < hi)
        cuts = sorted(cuts)
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            seg: Segment = constant(rate_scale)
            for f in factors:
                seg = product(seg, f.segments[f._segment_index(mid)])
            if extra is not None:
                seg = product(seg, extra)
            pieces.append(DensityPiece(a, b, seg))
    return tuple(pieces)


# ---------------------------------------------------------------------------
# base-filtration brackets
# ---------------------------------------------------------------------------


def bracket_measure(
    j1: PiecewiseJumpPath,
    j2: PiecewiseJumpPath,
    rate: float,
    intervals: tuple[tuple[float, float], ...] | None = None,
) -> PathMeasure:
    """Compensator of the co-jump sum of two event-driven processes."""
    if intervals is None:
        intervals = ((0.0, j1.horizon),)
    return PathMeasure(j1.horizon, _product_pieces(rate, [j1, j2], intervals))


def f_brackets(
    x: PiecewiseJumpPath, market: MarketModel, azema: AzemaTriple
) -> tuple[PathMeasure, PathMeasure]:
    """(<X, X>, <X, m>) under the base filtration.

    Both are event-intensity compensators: density ``rate * (X_- psi)^2`` on
    the whole horizon, and ``rate * X_- psi * gamma`` on the support of the
    survival martingale's jump coefficient.
    """
    lam, psi = market.poisson_rate, market.jump_multiplier
    jx = x.scaled(psi)
    xx = bracket_measure(jx, jx, lam)
    xm = PathMeasure(
        x.horizon, _product_pieces(lam, [jx, azema.gamma], _gamma_support(azema))
    )
    return xx, xm


def _gamma_support(azema: AzemaTriple) -> tuple[tuple[float, float], ...]:
    """Exact nonzero region of the survival jump coefficient."""
    g = azema.gamma
    out = []
    bounds = (0.0,) + g.event_times + (g.horizon,)
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        seg = g.segments[g._segment_index(mid)]
        probe = np.max(np.abs(np.asarray(seg(np.linspace(a, b, 7)))))
        if probe > 0.0:
            out.append((a, b))
    # merge adjacent
    merged: list[list[float]] = []
    for a, b in out:
        if merged and abs(merged[-1][1] - a) < 1e-15:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    return tuple((a, b) for a, b in merged)


# ---------------------------------------------------------------------------
# enlarged-filtration bracket and drift, stopped part
# ---------------------------------------------------------------------------


def g_bracket_stopped(
    x: PiecewiseJumpPath,
    market: MarketModel,
    azema: AzemaTriple,
    weighted: WeightedJumpTimeModel | None = None,
    rel_tol: float = 1e-8,
    return_both: bool = False,
):
    """Predictable bracket of the stopped enlarged martingale part of X.

    General route: ``1_{[0,tau]} . <X,X> + (1/Z_-) 1_{[0,tau]} . (sum dm (dX)^2)^p``,
    with density ``rate (X_- psi)^2 (1 + gamma/Z_-)``.  For the weighted model
    the closed form has density ``rate (X_- psi)^2`` supported on [0, T1];
    both routes must agree to ``rel_tol`` or the computation aborts.
    """
    lam, psi = market.poisson_rate, market.jump_multiplier
    tau = azema.tau
    jx = x.scaled(psi)

    def general_density(a: float, b: float) -> DensityPiece:
        mid = 0.5 * (a + b)
        seg_j = jx.segments[jx._segment_index(mid)]
        seg_g = azema.gamma.segments[azema.gamma._segment_index(mid)]
        seg_z = azema.z.segments[azema.z._segment_index(mid)]

        def fn(t, sj=seg_j, sg=seg_g, sz=seg_z):
            t = np.asarray(t, dtype=float)
            return lam * np.asarray(sj(t)) ** 2 * (
                1.0 + np.asarray(sg(t)) / np.asarray(sz(t))
            )

        return DensityPiece(a, b, FunctionSegment(fn, label="g-bracket"))

    cuts = {0.0, tau}
    for path in (x, azema.gamma, azema.z):
        cuts.update(t for t in path.event_times if 0.0 < t < tau)
    cuts = sorted(cuts)
    general = PathMeasure(
        x.horizon,
        tuple(general_density(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a),
    )

    if weighted is not None:
        t1 = x.event_times[0] if x.event_times else x.horizon
        hi = min(t1, tau)
        closed = PathMeasure(
            x.horizon, _product_pieces(lam, [jx, jx], (((0.0, hi)),) if hi > 0 else ())
        )
        _check_agreement(closed, general, tau, rel_tol)
        if return_both:
            return closed, general
        return closed
    if return_both:
        return general, general
    return general


def _check_agreement(closed: PathMeasure, general: PathMeasure, tau: float, rel_tol: float):
    ts = np.linspace(0.0, tau, 33)[1:-1]
    da = np.array([closed.density_at(float(t)) for t in ts])
    db = np.array([general.density_at(float(t)) for t in ts])
    scale = max(float(np.max(np.abs(da))), float(np.max(np.abs(db))), 1e-30)
    gap = float(np.max(np.abs(da - db))) / scale
    if gap > rel_tol:
        raise InternalConsistencyError(
            f"bracket evaluation routes disagree: relative gap {gap:.3e}"
        )


def g_drift_stopped(
    x: PiecewiseJumpPath,
    market: MarketModel,
    azema: AzemaTriple,
    weighted: WeightedJumpTimeModel | None = None,
    bracket: PathMeasure | None = None,
) -> DriftBracketPair:
    """Finite-variation part of stopped X under the enlarged flow, with bracket.

    The drift is ``(1/Z_-) 1_{[0,tau]} . <X, m>``.  In the weighted model the
    survival value cancels the decay factor exactly, leaving density
    ``-rate * psi * X_-`` on (T1, tau]it.
    """
    lam, psi = market.poisson_rate, market.jump_multiplier
    tau = azema.tau
    if weighted is not None:
        t1 = x.event_times[0]
        pieces = _product_pieces(-lam * psi, [x], (((t1, tau)),))
        drift = PathMeasure(x.horizon, pieces)
    else:
        support = intersect_intervals(_gamma_support(azema), 0.0, tau)
        pieces = []
        for lo, hi in support:
            for a, b, seg in _segment_on(x, lo, hi):
                mid = 0.5 * (a + b)
                seg_g = azema.gamma.segments[azema.gamma._segment_index(mid)]
                seg_z = azema.z.segments[azema.z._segment_index(mid)]

                def fn(t, sx=seg, sg=seg_g, sz=seg_z):
                    t = np.asarray(t, dtype=float)
                    return lam * psi * np.asarray(sx(t)) * np.asarray(sg(t)) / np.asarray(sz(t))

                pieces.append(DensityPiece(a, b, FunctionSegment(fn, label="g-drift")))
        drift = PathMeasure(x.horizon, tuple(pieces))
    if bracket is None:
        bracket = g_bracket_stopped(x, market, azema, weighted=weighted)
    window = Window("stopped", x.horizon, tau)
    return DriftBracketPair(drift, bracket, window)


# ---------------------------------------------------------------------------
# after an honest time
# ---------------------------------------------------------------------------


def g_drift_bracket_after(
    x: PiecewiseJumpPath,
    counting: PiecewiseJumpPath,
    model: LastPassageModel,
    azema: AzemaTriple,
    certified: bool,
) -> DriftBracketPair:
    """Drift and bracket of X restarted after the last-passage time.

    Drift density ``-(rate sigma X_- gamma)/(1 - Z_-)`` on (tau, T]; on the
    band where the pre-jump level sits within one unit above the threshold the
    ratio collapses to ``-rate sigma X_-`` exactly while the bracket density
    ``rate sigma^2 phi1 X_-^2 / phi2`` vanishes: the drift there cannot be
    absorbed.  Requires a certified random time.
    """
    if not certified:
        raise ModelError("after-time calculus needs a certified last-passage time")
    lam, sig, a_level = model.poisson_rate, model.sigma, model.level_a
    tau = azema.tau
    horizon = x.horizon
    y = drifted_level_path(counting, model)
    above_band = intersect_intervals(region_above(y, a_level + 1.0), tau, horizon)
    after_all = ((tau, horizon),) if horizon > tau else ()
    band = interval_difference(after_all, above_band)

    drift_pieces = list(_product_pieces(-lam * sig, [x], band))
    for lo, hi in above_band:
        for a, b, seg in _segment_on(x, lo, hi):
            mid = 0.5 * (a + b)
            s1 = azema.phi1.segments[azema.phi1._segment_index(mid)]
            s2 = azema.phi2.segments[azema.phi2._segment_index(mid)]

            def fn(t, sx=seg, s1=s1, s2=s2):
                t = np.asarray(t, dtype=float)
                p1, p2 = np.asarray(s1(t)), np.asarray(s2(t))
                return -lam * sig * np.asarray(sx(t)) * (p1 - p2) / (-p2)

            drift_pieces.append(DensityPiece(a, b, FunctionSegment(fn, label="drift-after")))
    drift_pieces.sort(key=lambda p: p.lo)
    drift = PathMeasure(horizon, tuple(drift_pieces))

    bracket_pieces = []
    for lo, hi in above_band:
        for a, b, seg in _segment_on(x, lo, hi):
            mid = 0.5 * (a + b)
            s1 = azema.phi1.segments[azema.phi1._segment_index(mid)]
            s2 = azema.phi2.segments[azema.phi2._segment_index(mid)]

            def fn(t, sx=seg, s1=s1, s2=s2):
                t = np.asarray(t, dtype=float)
                return lam * sig**2 * np.asarray(s1(t)) * np.asarray(sx(t)) ** 2 / np.asarray(s2(t))

            bracket_pieces.append(DensityPiece(a, b, FunctionSegment(fn, label="bracket-after")))
    bracket = PathMeasure(horizon, tuple(bracket_pieces))
    window = Window("after", horizon, tau)
    return DriftBracketPair(drift, bracket, window)


# ---------------------------------------------------------------------------
# pathwise enlarged martingale parts
# ---------------------------------------------------------------------------


def jeulin_hat_path(
    m_like: PiecewiseJumpPath,
    jump_coeff: PiecewiseJumpPath,
    rate: float,
    azema: AzemaTriple,
    side: str,
) -> PiecewiseJumpPath:
    """Enlarged-filtration martingale part of a base martingale, pathwise.

    before: ``M_{t ^ tau} - int_0^{t ^ tau} rate j gamma / Z_- du``
    after:  ``1_{(tau, .]} . M + int rate j gamma / (1 - Z_-) du`` on (tau, T].
    Evaluation-oriented: segments close over the cumulative drift integral.
    """
    if side not in ("before", "after"):
        raise ValueError("side must be 'before' or 'after'")
    tau = azema.tau
    horizon = m_like.horizon
    support = _gamma_support(azema)
    if side == "before":
        support = intersect_intervals(support, 0.0, tau)
    else:
        support = intersect_intervals(support, tau, horizon)
    pieces = []
    for lo, hi in support:
        cuts = {lo, hi}
        for f in (jump_coeff, azema.gamma, azema.z):
            cuts.update(t for t in f.event_times if lo < t < hi)
        cuts = sorted(cuts)
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            sj = jump_coeff.segments[jump_coeff._segment_index(mid)]
            sg = azema.gamma.segments[azema.gamma._segment_index(mid)]
            sz = azema.z.segments[azema.z._segment_index(mid)]
            if side == "before":
                def fn(t, sj=sj, sg=sg, sz=sz):
                    t = np.asarray(t, dtype=float)
                    return rate * np.asarray(sj(t)) * np.asarray(sg(t)) / np.asarray(sz(t))
            else:
                def fn(t, sj=sj, sg=sg, sz=sz):
                    t = np.asarray(t, dtype=float)
                    return -rate * np.asarray(sj(t)) * np.asarray(sg(t)) / (
                        1.0 - np.asarray(sz(t))
                    )
            pieces.append(DensityPiece(a, b, FunctionSegment(fn, label="info-drift")))
    drift = PathMeasure(horizon, tuple(pieces))
    cum = _CumulativeMeasure(drift)

    events = [t for t in m_like.event_times]
    if 0.0 < tau <= horizon and tau not in events:
        events.append(tau)
    events.sort()
    segs = []
    jumps = []
    bounds = [0.0] + events + [horizon]
    for i in range(len(bounds) - 1):
        a, b = bounds[i], bounds[i + 1]
        mid = 0.5 * (a + b) if b > a else a
        base_seg = m_like.segments[m_like._segment_index(mid)]
        if side == "before":
            def seg_fn(t, bs=base_seg, cum=cum):
                t = np.asarray(t, dtype=float)
                tt = np.minimum(t, tau)
                base = np.where(t <= tau, np.asarray(bs(t)), m_like.value(tau))
                return base - cum(tt)
        else:
            m_tau = m_like.value(tau) if tau <= horizon else m_like.terminal_value
            def seg_fn(t, bs=base_seg, cum=cum, m_tau=m_tau):
                t = np.asarray(t, dtype=float)
                on = t > tau
                base = np.where(on, np.asarray(bs(t)) - m_tau, 0.0)
                return base + cum(np.maximum(t, tau))
        segs.append(FunctionSegment(seg_fn, label=f"hat-{side}"))
    for t in events:
        j = m_like.jump_at(t)
        if side == "before":
            jumps.append(j if t <= tau else 0.0)
        else:
            jumps.append(j if t > tau else 0.0)
    x0 = m_like.initial_value if side == "before" else 0.0
    return PiecewiseJumpPath(horizon, x0, tuple(events), tuple(jumps), tuple(segs))


class _CumulativeMeasure:
    """Evaluates mu((0, t]) with per-piece closed forms or quadrature."""

    def __init__(self, measure: PathMeasure):
        self.measure = measure
        self.starts = [p.lo for p in measure.pieces]
        self.offsets = []
        acc = 0.0
        for p in measure.pieces:
            self.offsets.append(acc)
            acc += p.density.integral(p.lo, p.hi)
        self.total = acc

    def _scalar(self, t: float) -> float:
        i = bisect.bisect_right(self.starts, t) - 1
        if i < 0:
            return 0.0
        p = self.measure.pieces[i]
        if t >= p.hi:
            return self.offsets[i] + p.density.integral(p.lo, p.hi)
        return self.offsets[i] + p.density.integral(p.lo, t)

    def __call__(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([self._scalar(float(v)) for v in ts])
        return out if np.ndim(t) else float(out[0])
