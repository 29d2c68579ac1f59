"""Vectorized Monte Carlo engines.

Pure-numpy samplers for the drifted jump process ``Y = mu*t - N``: global
drop sampling for the ruin table, fixed-horizon event batches, and
certified-horizon event batches.  Everything is deterministic given the seed.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "simulate_max_drop",
    "poisson_event_batch",
    "certified_event_batch",
    "batch_rng",
]


def batch_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream))))


def simulate_max_drop(
    rate: float,
    drift: float,
    stop_gap: float,
    n_paths: int,
    seed: int,
    chunk: int = 250_000,
) -> np.ndarray:
    """Largest drop of Y below zero, truncated once a further drop is unlikely.

    Runs each path until the current level clears the running minimum by
    ``stop_gap``; by the memoryless structure at jump times the remaining
    error is bounded by the ruin probability from ``stop_gap``.
    """
    if drift <= rate:
        raise ValueError("needs drift > rate for almost-sure termination")
    out = np.empty(n_paths)
    done = 0
    rng = batch_rng(seed)
    while done < n_paths:
        m = min(chunk, n_paths - done)
        t = np.zeros(m)
        k = np.zeros(m)
        min_y = np.zeros(m)
        active = np.arange(m)
        while active.size:
            gaps = rng.exponential(1.0 / rate, active.size)
            t[active] += gaps
            k[active] += 1.0
            y_post = drift * t[active] - k[active]
            min_y[active] = np.minimum(min_y[active], y_post)
            keep = (y_post - min_y[active]) < stop_gap
            active = active[keep]
        out[done : done + m] = -min_y
        done += m
    return out


def poisson_event_batch(
    rate: float, horizon: float, n_paths: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Event times of n Poisson paths on [0, horizon].

    Returns ``(counts, flat_times, offsets)``: path i owns
    ``flat_times[offsets[i]:offsets[i] + counts[i]]``, sorted.
    """
    rng = batch_rng(seed)
    counts = rng.poisson(rate * horizon, n_paths)
    total = int(counts.sum())
    u = rng.random(total) * horizon
    path_ids = np.repeat(np.arange(n_paths), counts)
    order = np.lexsort((u, path_ids))
    flat = u[order]
    offsets = np.zeros(n_paths, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    return counts, flat, offsets


def certified_event_batch(
    rate: float,
    drift: float,
    target_level: float,
    n_paths: int,
    seed: int,
    pad: float = 1e-9,
    max_events: int = 10**6,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Event batches run until Y first reaches ``target_level``.

    Returns ``(counts, flat_times, offsets, horizons)`` where each horizon is
    the first time ``drift*t - N_t`` touches the target (plus a hair, so the
    terminal clearance is strict).
    """
    if drift <= rate:
        raise ValueError("needs drift > rate")
    rng = batch_rng(seed)
    times = np.zeros((n_paths, 16))
    counts = np.zeros(n_paths, dtype=np.int64)
    horizons = np.zeros(n_paths)
    t = np.zeros(n_paths)
    active = np.arange(n_paths)
    capacity = 16
    while active.size:
        gaps = rng.exponential(1.0 / rate, active.size)
        t_reach = (target_level + counts[active]) / drift
        arrives = t[active] + gaps
        finished = t_reach < arrives
        fin_idx = active[finished]
        horizons[fin_idx] = t_reach[finished] * (1.0 + pad) + pad
        cont_idx = active[~finished]
        t[cont_idx] = arrives[~finished]
        if cont_idx.size:
            need = counts[cont_idx].max() + 1
            if need > capacity:
                capacity = max(capacity * 2, int(need))
                grown = np.zeros((n_paths, capacity))
                grown[:, : times.shape[1]] = times
                times = grown
            times[cont_idx, counts[cont_idx]] = t[cont_idx]
            counts[cont_idx] += 1
            if counts.max() > max_events:
                raise RuntimeError("certification not reached within max_events")
        active = cont_idx
    total = int(counts.sum())
    flat = np.empty(total)
    offsets = np.zeros(n_paths, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    for i in range(n_paths):
        flat[offsets[i] : offsets[i] + counts[i]] = times[i, : counts[i]]
    return counts, flat, offsets, horizons
