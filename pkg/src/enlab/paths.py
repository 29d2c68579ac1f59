"""Cadlag piecewise-analytic jump paths and the Poisson market primitives."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field

import numpy as np

from .segments import (
    AnalyticSegment,
    FunctionSegment,
    Segment,
    constant,
    exponential,
    linear,
)

__all__ = [
    "PathConstructionError",
    "ParameterError",
    "ModelError",
    "PiecewiseJumpPath",
    "MarketModel",
    "simulate_poisson",
    "compensated_martingale",
    "stochastic_exponential",
    "path_rng",
]

_JUMP_CONSISTENCY_RTOL = 1e-9


class ParameterError(ValueError):
    """Invalid scalar parameter (rate, horizon, weights...)."""


class ModelError(ValueError):
    """Input path incompatible with the requested construction."""


class PathConstructionError(ValueError):
    """Piecewise path violates its structural invariants."""


@dataclass(frozen=True)
class PiecewiseJumpPath:
    """Right-continuous path on [0, horizon] with finitely many jumps.

    ``segments[i]`` describes the path on ``[e_{i-1}, e_i)`` (with ``e_{-1}=0``
    and a final segment closing at the horizon); ``jumps[i]`` is the jump at
    ``event_times[i]``, so the value at an event time is the left limit plus
    the jump and starts the next segment.
    """

    horizon: float
    initial_value: float
    event_times: tuple[float, ...]
    jumps: tuple[float, ...]
    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise PathConstructionError("horizon must be finite and positive")
        if len(self.jumps) != len(self.event_times):
            raise PathConstructionError("one jump per event time required")
        if len(self.segments) != len(self.event_times) + 1:
            raise PathConstructionError("need len(event_times) + 1 segments")
        prev = 0.0
        for t in self.event_times:
            if not (prev < t <= self.horizon):
                raise PathConstructionError(
                    f"event times must be strictly increasing in (0, horizon]; got {t}"
                )
            prev = t
        self._validate_jump_consistency()

    def _validate_jump_consistency(self):
        for i, t in enumerate(self.event_times):
            left = float(self.segments[i](t))
            start = float(self.segments[i + 1](t))
            expect = left + self.jumps[i]
            scale = max(1.0, abs(left), abs(start))
            if abs(start - expect) > _JUMP_CONSISTENCY_RTOL * scale:
                raise PathConstructionError(
                    f"segment mismatch at t={t}: left {left} + jump {self.jumps[i]} "
                    f"!= next segment start {start}"
                )

    # -- evaluation ---------------------------------------------------------

    def _segment_index(self, t: float) -> int:
        # right-continuous: t in [e_{i-1}, e_i) uses segment i
        return bisect.bisect_right(self.event_times, t)

    def value(self, t: float) -> float:
        if t < 0.0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        return float(self.segments[self._segment_index(t)](t))

    def left_limit(self, t: float) -> float:
        """Limit from the left; at t=0 returns the initial value."""
        if t <= 0.0:
            return float(self.initial_value)
        idx = bisect.bisect_left(self.event_times, t)
        return float(self.segments[idx](t))

    def jump_at(self, t: float) -> float:
        idx = bisect.bisect_left(self.event_times, t)
        if idx < len(self.event_times) and self.event_times[idx] == t:
            return self.jumps[idx]
        return 0.0

    def values(self, ts) -> np.ndarray:
        return np.array([self.value(float(t)) for t in np.atleast_1d(ts)])

    @property
    def terminal_value(self) -> float:
        return self.value(self.horizon)

    def n_events(self, upto: float | None = None) -> int:
        if upto is None:
            return len(self.event_times)
        return bisect.bisect_right(self.event_times, upto)

    # -- constructors -------------------------------------------------------

    @classmethod
    def counting(cls, event_times, horizon: float) -> "PiecewiseJumpPath":
        """Unit-jump counting path N."""
        ev = tuple(float(t) for t in event_times)
        segs = tuple(constant(float(k)) for k in range(len(ev) + 1))
        return cls(horizon, 0.0, ev, (1.0,) * len(ev), segs)

    def scaled(self, c: float) -> "PiecewiseJumpPath":
        segs = tuple(
            s.scaled(c) if isinstance(s, AnalyticSegment) else FunctionSegment(lambda t, s=s: c * np.asarray(s(t)))
            for s in self.segments
        )
        return PiecewiseJumpPath(
            self.horizon, c * self.initial_value, self.event_times,
            tuple(c * j for j in self.jumps), segs,
        )

    # -- serialization (analytic paths only) --------------------------------

    def to_json(self) -> str:
        if not all(isinstance(s, AnalyticSegment) for s in self.segments):
            raise TypeError("only analytic paths serialize to JSON")
        record = {
            "horizon": self.horizon,
            "x0": self.initial_value,
            "events": [
                {"t": t, "jump": j} for t, j in zip(self.event_times, self.jumps)
            ],
            "segments": [s.to_json() for s in self.segments],
        }
        return json.dumps(record, sort_keys=True)

    @classmethod
    def from_json(cls, payload: str) -> "PiecewiseJumpPath":
        record = json.loads(payload)
        return cls(
            horizon=record["horizon"],
            initial_value=record["x0"],
            event_times=tuple(e["t"] for e in record["events"]),
            jumps=tuple(e["jump"] for e in record["events"]),
            segments=tuple(AnalyticSegment.from_json(s) for s in record["segments"]),
        )


@dataclass(frozen=True)
class MarketModel:
    """Pure-jump price model ``dX = X_- * psi dM`` driven by a Poisson process."""

    poisson_rate: float
    jump_multiplier: float
    initial_price: float = 1.0

    def __post_init__(self):
        if self.poisson_rate <= 0.0:
            raise ParameterError("poisson_rate must be positive")
        if self.jump_multiplier <= -1.0:
            raise ParameterError(
                "jump_multiplier must exceed -1 to keep the price positive"
            )
        if self.jump_multiplier == 0.0:
            raise ParameterError("jump_multiplier must be nonzero")
        if self.initial_price <= 0.0:
            raise ParameterError("initial_price must be positive")


def path_rng(seed: int, path_index: int = 0) -> np.random.Generator:
    """Counter-based per-path generator: batch results match serial runs."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(path_index))))


def simulate_poisson(
    rate: float, horizon: float, seed: int, path_index: int = 0
) -> PiecewiseJumpPath:
    """Draw a Poisson counting path; deterministic given (seed, path_index)."""
    if rate < 0.0:
        raise ParameterError("rate must be nonnegative")
    if horizon <= 0.0:
        raise ParameterError("horizon must be positive")
    if rate == 0.0:
        return PiecewiseJumpPath.counting((), horizon)
    rng = path_rng(seed, path_index)
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > horizon:
            break
        times.append(t)
    return PiecewiseJumpPath.counting(times, horizon)


def compensated_martingale(path: PiecewiseJumpPath, rate: float) -> PiecewiseJumpPath:
    """``M = N - rate * t`` for a unit-jump counting path N."""
    if any(j != 1.0 for j in path.jumps):
        raise ModelError("compensated_martingale requires a unit-jump counting path")
    for seg in path.segments:
        if not (isinstance(seg, AnalyticSegment) and seg.is_constant()):
            raise ModelError("counting path must be piecewise constant")
    events = path.event_times
    segs = []
    for i in range(len(events) + 1):
        t0 = 0.0 if i == 0 else events[i - 1]
        segs.append(linear(float(i) - rate * t0, -rate, t0))
    return PiecewiseJumpPath(
        path.horizon, 0.0, events, (1.0,) * len(events), tuple(segs)
    )


def stochastic_exponential(
    path: PiecewiseJumpPath, model: MarketModel
) -> PiecewiseJumpPath:
    """Closed-form solution ``X_t = X0 exp(-lam psi t) (1+psi)^{N_t}``.

    Each event multiplies the price by ``1 + psi``, consistent with
    ``dX = X_- psi dM``.
    """
    lam, psi, x0 = model.poisson_rate, model.jump_multiplier, model.initial_price
    if any(j != 1.0 for j in path.jumps):
        raise ModelError("stochastic_exponential requires a counting path")
    events = path.event_times
    decay = -lam * psi
    segs = []
    jumps = []
    for i in range(len(events) + 1):
        t0 = 0.0 if i == 0 else events[i - 1]
        level = x0 * np.exp(decay * t0) * (1.0 + psi) ** i
        segs.append(exponential(level, decay, t0))
        if i < len(events):
            t = events[i]
            left = x0 * np.exp(decay * t) * (1.0 + psi) ** i
            jumps.append(left * psi)
    return PiecewiseJumpPath(path.horizon, x0, events, tuple(jumps), tuple(segs))
