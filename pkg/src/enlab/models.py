"""Random-time models with closed-form Azema supermartingales.

Two models are implemented:

* a weighted combination ``tau = k1*T1 + k2*T2`` of the first two Poisson
  event times (tau is announced between T1 and T2 and kills the survival
  probability exactly at T2), and
* the last passage time of the drifted jump process ``Y = mu*t - N`` below a
  level ``a``, an honest time whose conditional survival is expressed through
  the ruin probability of Y.

Both produce an :class:`AzemaTriple` bundling the survival process Z, its
left-variant, the martingale part m, and the dual optional projection of the
occurrence indicator.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import montecarlo
from .paths import ModelError, ParameterError, PiecewiseJumpPath
from .segments import AnalyticSegment, FunctionSegment, PolyExpTerm, constant, linear

__all__ = [
    "HorizonTooShortError",
    "WeightedJumpTimeModel",
    "LastPassageModel",
    "AzemaTriple",
    "RuinFunction",
    "tau_weighted",
    "azema_weighted",
    "adjustment_coefficient",
    "certification_level",
    "build_ruin_function",
    "ruin_probability",
    "drifted_level_path",
    "level_crossings",
    "tau_last_passage",
    "azema_last_passage",
    "simulate_weighted_path",
    "simulate_certified_path",
]


class HorizonTooShortError(RuntimeError):
    """Path does not resolve the random time; caller must extend the horizon."""


# ---------------------------------------------------------------------------
# model parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedJumpTimeModel:
    """tau = k1*T1 + k2*T2 with positive weights summing to one."""

    k1: float
    k2: float
    poisson_rate: float

    def __post_init__(self):
        if self.k1 <= 0.0 or self.k2 <= 0.0:
            raise ParameterError("weights must be positive")
        if abs(self.k1 + self.k2 - 1.0) > 1e-12:
            raise ParameterError("weights must sum to one")
        if self.poisson_rate <= 0.0:
            raise ParameterError("poisson_rate must be positive")

    @property
    def decay_rate(self) -> float:
        """Rate of the conditional survival between the first two events."""
        return self.poisson_rate * self.k1 / self.k2


@dataclass(frozen=True)
class LastPassageModel:
    """tau = sup{t : Y_t <= a} for Y = mu*t - N, with a derived from a price barrier."""

    barrier_b: float
    sigma: float
    poisson_rate: float
    eps_cert: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.barrier_b < 1.0:
            raise ParameterError("barrier must lie in (0, 1)")
        if self.sigma <= 0.0:
            raise ParameterError("sigma must be positive")
        if self.poisson_rate <= 0.0:
            raise ParameterError("poisson_rate must be positive")
        if not 0.0 < self.eps_cert < 1.0:
            raise ParameterError("eps_cert must lie in (0, 1)")
        if self.drift_mu <= self.poisson_rate:
            raise ParameterError("drift must exceed the jump rate (transient Y)")

    @property
    def level_a(self) -> float:
        return -math.log(self.barrier_b) / math.log1p(self.sigma)

    @property
    def drift_mu(self) -> float:
        return self.poisson_rate * self.sigma / math.log1p(self.sigma)


# ---------------------------------------------------------------------------
# Azema triple container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AzemaTriple:
    """Pathwise (Z, Z~, m, D^o) data for one simulated path and one model.

    ``gamma`` is the predictable jump-size coefficient of m: at any event time
    ``dm = gamma(u-) * dN``; between events m moves by ``-rate * gamma`` per
    unit time.  ``phi1``/``phi2`` are populated by the last-passage model only.
    """

    z: PiecewiseJumpPath
    m: PiecewiseJumpPath
    d_of: PiecewiseJumpPath
    delta_m_atoms: tuple[tuple[float, float], ...]
    gamma: PiecewiseJumpPath
    tau: float
    phi1: PiecewiseJumpPath | None = None
    phi2: PiecewiseJumpPath | None = None

    def delta_m_at(self, t: float) -> float:
        idx = bisect.bisect_left(self._atom_times, t)
        if idx < len(self._atom_times) and self._atom_times[idx] == t:
            return self.delta_m_atoms[idx][1]
        return 0.0

    def z_tilde(self, t: float) -> float:
        """Left-variant survival: Z_{t-} + jump of m at t."""
        if t <= 0.0:
            return 1.0
        return self.z.left_limit(t) + self.delta_m_at(t)

    def __post_init__(self):
        object.__setattr__(
            self, "_atom_times", tuple(t for t, _ in self.delta_m_atoms)
        )


# ---------------------------------------------------------------------------
# weighted jump-time model
# ---------------------------------------------------------------------------


def tau_weighted(path: PiecewiseJumpPath, model: WeightedJumpTimeModel) -> float:
    """k1*T1 + k2*T2; strictly between the first two event times."""
    if len(path.event_times) < 2:
        raise HorizonTooShortError(
            "weighted random time needs two events inside the horizon"
        )
    t1, t2 = path.event_times[0], path.event_times[1]
    return model.k1 * t1 + model.k2 * t2


def azema_weighted(
    path: PiecewiseJumpPath, model: WeightedJumpTimeModel
) -> AzemaTriple:
    """Closed-form survival data for the weighted model.

    Z is 1 before T1, decays exponentially on [T1, T2) and vanishes from T2
    on; m compensates the single jump of Z at T2; the dual optional projection
    is continuous because tau has a conditional density.
    """
    tau = tau_weighted(path, model)
    t1, t2 = path.event_times[0], path.event_times[1]
    horizon = path.horizon
    lam, k1, k2 = model.poisson_rate, model.k1, model.k2
    r = -model.decay_rate  # survival decay exponent on [T1, T2)
    phi_t2 = math.exp(r * (t2 - t1))

    events = (t1, t2)
    z = PiecewiseJumpPath(
        horizon, 1.0, events, (0.0, -phi_t2),
        (
            constant(1.0),
            AnalyticSegment((PolyExpTerm((1.0,), r, t1),)),
            constant(0.0),
        ),
    )
    m_end = 1.0 + (k2 / k1) * (1.0 - phi_t2) - phi_t2
    m = PiecewiseJumpPath(
        horizon, 1.0, events, (0.0, -phi_t2),
        (
            constant(1.0),
            AnalyticSegment(
                (
                    PolyExpTerm((1.0 + k2 / k1,), 0.0, t1),
                    PolyExpTerm((-k2 / k1,), r, t1),
                )
            ),
            constant(m_end),
        ),
    )
    d_of = PiecewiseJumpPath(
        horizon, 0.0, events, (0.0, 0.0),
        (
            constant(0.0),
            AnalyticSegment(
                (
                    PolyExpTerm((1.0 / k1,), 0.0, t1),
                    PolyExpTerm((-1.0 / k1,), r, t1),
                )
            ),
            constant((1.0 - phi_t2) / k1),
        ),
    )
    gamma = PiecewiseJumpPath(
        horizon, 0.0, events, (-1.0, phi_t2),
        (
            constant(0.0),
            AnalyticSegment((PolyExpTerm((-1.0,), r, t1),)),
            constant(0.0),
        ),
    )
    return AzemaTriple(
        z=z, m=m, d_of=d_of, delta_m_atoms=((t2, -phi_t2),), gamma=gamma, tau=tau
    )


def simulate_weighted_path(
    model: WeightedJumpTimeModel,
    horizon_hint: float,
    seed: int,
    path_index: int = 0,
    margin: float = 1.0,
) -> PiecewiseJumpPath:
    """Counting path guaranteed to resolve tau: horizon extends past T2."""
    from .paths import path_rng

    rng = path_rng(seed, path_index)
    lam = model.poisson_rate
    times = [rng.exponential(1.0 / lam)]
    times.append(times[0] + rng.exponential(1.0 / lam))
    horizon = max(horizon_hint, times[1] + margin)
    t = times[1]
    while True:
        t += rng.exponential(1.0 / lam)
        if t > horizon:
            break
        times.append(t)
    return PiecewiseJumpPath.counting(times, horizon)


# ---------------------------------------------------------------------------
# ruin probability
# ---------------------------------------------------------------------------


def adjustment_coefficient(poisson_rate: float, drift_mu: float) -> float:
    """Positive root of ``lam (e^R - 1) = mu R`` (exponential tail exponent).

    Gives the classical bound ``P(ruin from x) <= exp(-R x)`` used to certify
    truncated first-passage simulations.
    """
    lam, mu = poisson_rate, drift_mu
    if mu <= lam:
        raise ParameterError("needs net upward drift (mu > lam)")

    def f(r: float) -> float:
        return lam * math.expm1(r) - mu * r

    hi = 1.0
    while f(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("failed to bracket the adjustment coefficient")
    return float(brentq(f, 1e-12, hi, xtol=1e-14, rtol=1e-15))


def certification_level(model: LastPassageModel) -> float:
    """Distance above the level beyond which a return is eps_cert-unlikely."""
    r = adjustment_coefficient(model.poisson_rate, model.drift_mu)
    return -math.log(model.eps_cert) / r


@dataclass(frozen=True)
class RuinFunction:
    """Tabulated ruin probability of ``x + Y`` with linear interpolation.

    1 on x < 0; beyond the grid the exponential tail bound takes over, so the
    returned values stay below the declared tail epsilon there.
    """

    step: float
    values: tuple[float, ...]
    adjustment: float
    n_paths: int
    seed: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if np.any(v < -1e-12) or np.any(v > 1.0 + 1e-12):
            raise ValueError("ruin values must lie in [0, 1]")
        if np.any(np.diff(v) > 1e-12):
            raise ValueError("ruin table must be non-increasing")

    @property
    def x_max(self) -> float:
        return self.step * (len(self.values) - 1)

    @property
    def tail_bound(self) -> float:
        return math.exp(-self.adjustment * self.x_max)

    @property
    def _vals(self) -> np.ndarray:
        cached = self.__dict__.get("_vals_cache")
        if cached is None:
            cached = np.asarray(self.values)
            self.__dict__["_vals_cache"] = cached
        return cached

    def _scalar(self, x: float) -> float:
        if x < 0.0:
            return 1.0
        vals = self._vals
        if x > self.x_max:
            return min(float(vals[-1]), math.exp(-self.adjustment * x))
        pos = x / self.step
        lo = int(pos)
        if lo >= len(vals) - 1:
            return float(vals[-1])
        frac = pos - lo
        return float(vals[lo]) * (1.0 - frac) + float(vals[lo + 1]) * frac

    def __call__(self, x):
        if np.ndim(x) == 0:
            return self._scalar(float(x))
        x = np.asarray(x, dtype=float)
        grid_vals = self._vals
        xs = np.clip(x / self.step, 0.0, len(grid_vals) - 1.0)
        lo = np.floor(xs).astype(int)
        hi = np.minimum(lo + 1, len(grid_vals) - 1)
        frac = xs - lo
        out = grid_vals[lo] * (1.0 - frac) + grid_vals[hi] * frac
        tail = x > self.x_max
        if np.any(tail):
            out = np.where(
                tail,
                np.minimum(grid_vals[-1], np.exp(-self.adjustment * x)),
                out,
            )
        return np.where(x < 0.0, 1.0, out)


def build_ruin_function(
    model: LastPassageModel,
    n_paths: int = 10**6,
    seed: int = 20240001,
    step: float = 0.01,
) -> RuinFunction:
    """Monte Carlo table of the ruin probability over a certified grid.

    One batch of simulated global minima of Y tabulates the whole grid: the
    ruin probability from x equals the chance the overall drop of Y exceeds x.
    Each path runs until a further drop has probability below eps_cert, which
    bounds the truncation bias uniformly.
    """
    r = adjustment_coefficient(model.poisson_rate, model.drift_mu)
    x_cert = -math.log(model.eps_cert) / r
    x_max = step * math.ceil(x_cert / step)
    drops = montecarlo.simulate_max_drop(
        rate=model.poisson_rate,
        drift=model.drift_mu,
        stop_gap=x_cert,
        n_paths=n_paths,
        seed=seed,
    )
    grid = np.arange(0.0, x_max + 0.5 * step, step)
    # survival of the drop distribution, strictly-greater convention
    sorted_drops = np.sort(drops)
    counts = len(drops) - np.searchsorted(sorted_drops, grid, side="right")
    values = counts / float(len(drops))
    return RuinFunction(
        step=step,
        values=tuple(values.tolist()),
        adjustment=r,
        n_paths=n_paths,
        seed=seed,
    )


@lru_cache(maxsize=8)
def _cached_table(model: LastPassageModel, n_paths: int, seed: int) -> RuinFunction:
    return build_ruin_function(model, n_paths=n_paths, seed=seed)


def ruin_probability(
    x: float,
    model: LastPassageModel,
    table: RuinFunction | None = None,
    n_paths: int = 10**6,
    seed: int = 20240001,
) -> float:
    """Ruin probability of ``x + Y``; 1 for x < 0, tabulated otherwise."""
    if x < 0.0:
        return 1.0
    if table is None:
        table = _cached_table(model, n_paths, seed)
    return float(table(x))


# ---------------------------------------------------------------------------
# last-passage model
# ---------------------------------------------------------------------------


def drifted_level_path(
    path: PiecewiseJumpPath, model: LastPassageModel
) -> PiecewiseJumpPath:
    """Y = mu*t - N built on the counting path's events."""
    if any(j != 1.0 for j in path.jumps):
        raise ModelError("drifted level needs a unit-jump counting path")
    mu = model.drift_mu
    events = path.event_times
    segs = []
    for i in range(len(events) + 1):
        t0 = 0.0 if i == 0 else events[i - 1]
        segs.append(linear(mu * t0 - i, mu, t0))
    return PiecewiseJumpPath(
        path.horizon, 0.0, events, (-1.0,) * len(events), tuple(segs)
    )


def level_crossings(y: PiecewiseJumpPath, level: float) -> tuple[float, ...]:
    """Exact upward crossing times of ``level`` by the drifted path."""
    crossings = []
    bounds = (0.0,) + y.event_times + (y.horizon,)
    for i in range(len(bounds) - 1):
        s, e = bounds[i], bounds[i + 1]
        if e <= s:
            continue
        y0 = y.value(s)
        seg = y.segments[i]
        slope = float(seg.derivative()((s + e) / 2.0)) if isinstance(seg, AnalyticSegment) else None
        if slope is None or slope <= 0.0:
            continue
        if y0 <= level:
            t_cross = s + (level - y0) / slope
            if s <= t_cross < e:
                crossings.append(t_cross)
    return tuple(crossings)


def tau_last_passage(
    path: PiecewiseJumpPath, model: LastPassageModel
) -> tuple[float, bool]:
    """Last time Y sits at or below the level, with a certification flag.

    The flag is true when the terminal clearance above the level makes any
    later return less likely than eps_cert; otherwise the caller must extend
    the horizon.
    """
    y = drifted_level_path(path, model)
    a = model.level_a
    crossings = level_crossings(y, a)
    tau = crossings[-1] if crossings else 0.0
    clearance = y.value(y.horizon) - a
    certified = clearance > certification_level(model)
    return tau, certified


def simulate_certified_path(
    model: LastPassageModel,
    seed: int,
    path_index: int = 0,
    max_events: int = 10**6,
) -> PiecewiseJumpPath:
    """Counting path extended until the last-passage time is certified."""
    from .paths import path_rng

    rng = path_rng(seed, path_index)
    lam, mu, a = model.poisson_rate, model.drift_mu, model.level_a
    x_cert = certification_level(model)
    target = a + x_cert  # Y must exceed this at the horizon
    times: list[float] = []
    t = 0.0
    k = 0
    while k < max_events:
        gap = rng.exponential(1.0 / lam)
        # does Y reach the target before the next event?
        t_reach = (target + k) / mu
        if t_reach < t + gap:
            # pad slightly so the terminal clearance is strict
            horizon = t_reach + 1e-9 * max(1.0, t_reach)
            return PiecewiseJumpPath.counting(times, horizon)
        t += gap
        k += 1
        times.append(t)
    raise HorizonTooShortError("certification not reached within max_events")


def azema_last_passage(
    path: PiecewiseJumpPath, model: LastPassageModel, psi: RuinFunction
) -> AzemaTriple:
    """Survival data for the honest last-passage time.

    Z equals the ruin probability of the clearance above the level (and 1
    below it); m jumps only at Poisson events, with sizes read off the ruin
    function; the dual optional projection steps up by 1 - psi(0) at each
    upward level crossing, where the current excursion may prove final.
    """
    y = drifted_level_path(path, model)
    a = model.level_a
    mu = model.drift_mu
    horizon = path.horizon
    n_events = set(path.event_times)
    crossings = level_crossings(y, a)
    band_tops = level_crossings(y, a + 1.0)
    boundaries = tuple(sorted(n_events | set(crossings) | set(band_tops)))
    if len(boundaries) != len(n_events) + len(crossings) + len(band_tops):
        raise ModelError("coincident event and crossing times; perturb the path")

    psi0 = float(psi(0.0))
    step_d = 1.0 - psi0
    crossing_set = set(crossings)
    band_top_set = set(band_tops)

    z_segs, m_segs, g_segs, p1_segs, p2_segs = [], [], [], [], []
    d_levels = []
    d_level = 0.0
    starts = (0.0,) + boundaries
    for t0 in starts:
        if t0 in crossing_set:
            d_level += step_d
        d_levels.append(d_level)
        # crossing boundaries carry their level exactly; re-evaluating the
        # linear segment there can round to the wrong side of the threshold
        if t0 in crossing_set:
            y0, above = a, True
        elif t0 in band_top_set:
            y0, above = a + 1.0, True
        elif t0 == 0.0:
            y0, above = 0.0, a <= 0.0
        else:
            y0 = y.value(t0)
            above = y0 >= a
        if above:
            z_fn = _compose_psi(psi, y0, mu, t0, -a)
            z_segs.append(FunctionSegment(z_fn, label="psi(Y-a)"))
            m_segs.append(
                FunctionSegment(_shifted(z_fn, d_level), label="Z+D")
            )
        else:
            z_segs.append(constant(1.0))
            m_segs.append(constant(1.0 + d_level))
        # jump-size coefficient of m and the two ruin offsets
        p1 = _compose_phi(psi, y0, mu, t0, -a - 1.0)
        p2 = _compose_phi(psi, y0, mu, t0, -a)
        p1_segs.append(FunctionSegment(p1, label="phi1"))
        p2_segs.append(FunctionSegment(p2, label="phi2"))
        g_segs.append(
            FunctionSegment(lambda t, f1=p1, f2=p2: f1(t) - f2(t), label="gamma")
        )

    def z_value(t: float, seg_idx: int) -> float:
        return float(z_segs[seg_idx](t))

    z_jumps, m_jumps, g_jumps, p1_jumps, p2_jumps, d_jumps = [], [], [], [], [], []
    atoms = []
    for i, t in enumerate(boundaries):
        left = {
            "z": float(z_segs[i](t)),
            "m": float(m_segs[i](t)),
            "g": float(g_segs[i](t)),
            "p1": float(p1_segs[i](t)),
            "p2": float(p2_segs[i](t)),
        }
        right = {
            "z": float(z_segs[i + 1](t)),
            "m": float(m_segs[i + 1](t)),
            "g": float(g_segs[i + 1](t)),
            "p1": float(p1_segs[i + 1](t)),
            "p2": float(p2_segs[i + 1](t)),
        }
        z_jumps.append(right["z"] - left["z"])
        m_jumps.append(right["m"] - left["m"])
        g_jumps.append(right["g"] - left["g"])
        p1_jumps.append(right["p1"] - left["p1"])
        p2_jumps.append(right["p2"] - left["p2"])
        d_jumps.append(d_levels[i + 1] - d_levels[i])
        if t in n_events:
            y_minus = y.left_limit(t)
            dm = 0.0
            if y_minus > a + 1.0:
                dm += float(psi(y_minus - a - 1.0)) - 1.0
            if y_minus > a:
                dm -= float(psi(y_minus - a)) - 1.0
            if dm != 0.0:
                atoms.append((t, dm))

    d_of = PiecewiseJumpPath(
        horizon, 0.0, boundaries, tuple(d_jumps),
        tuple(constant(v) for v in d_levels),
    )
    z = PiecewiseJumpPath(horizon, 1.0, boundaries, tuple(z_jumps), tuple(z_segs))
    m = PiecewiseJumpPath(horizon, 1.0, boundaries, tuple(m_jumps), tuple(m_segs))
    gamma = PiecewiseJumpPath(horizon, float(g_segs[0](0.0)), boundaries, tuple(g_jumps), tuple(g_segs))
    phi1 = PiecewiseJumpPath(horizon, float(p1_segs[0](0.0)), boundaries, tuple(p1_jumps), tuple(p1_segs))
    phi2 = PiecewiseJumpPath(horizon, float(p2_segs[0](0.0)), boundaries, tuple(p2_jumps), tuple(p2_segs))
    tau = crossings[-1] if crossings else 0.0
    return AzemaTriple(
        z=z, m=m, d_of=d_of, delta_m_atoms=tuple(atoms), gamma=gamma, tau=tau,
        phi1=phi1, phi2=phi2,
    )


def _compose_psi(psi: RuinFunction, y0: float, mu: float, t0: float, shift: float):
    def fn(t):
        return psi(y0 + mu * (np.asarray(t, dtype=float) - t0) + shift)

    return fn


def _compose_phi(psi: RuinFunction, y0: float, mu: float, t0: float, shift: float):
    def fn(t):
        return psi(y0 + mu * (np.asarray(t, dtype=float) - t0) + shift) - 1.0

    return fn


def _shifted(fn, offset: float):
    def shifted(t):
        return np.asarray(fn(t)) + offset

    return shifted
