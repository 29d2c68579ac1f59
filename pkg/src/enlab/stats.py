"""Vectorized statistical test suites.

Closed-form terminal functionals let the martingale and bracket-compensator
checks run at 1e5+ paths without path objects.  Each check returns the sample
mean of a quantity whose expectation is zero, its pooled standard error and
the resulting z-score; the acceptance gate requires |z| below a small bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import LastPassageModel, RuinFunction, WeightedJumpTimeModel
from .montecarlo import batch_rng, certified_event_batch, poisson_event_batch
from .paths import MarketModel

__all__ = [
    "ZScore",
    "weighted_statistics",
    "weighted_conditional_law",
    "lastpassage_statistics",
    "lastpassage_law_check",
]


@dataclass(frozen=True)
class ZScore:
    name: str
    mean: float
    se: float
    z: float
    n: int

    @classmethod
    def from_samples(cls, name: str, samples: np.ndarray, target: float = 0.0):
        n = len(samples)
        mean = float(np.mean(samples))
        se = float(np.std(samples, ddof=1) / math.sqrt(n))
        z = (mean - target) / se if se > 0 else 0.0
        return cls(name, mean, se, float(z), n)


# ---------------------------------------------------------------------------
# weighted jump-time model
# ---------------------------------------------------------------------------


def weighted_statistics(
    model: WeightedJumpTimeModel,
    market: MarketModel,
    horizon: float,
    n_paths: int,
    seed: int,
) -> list[ZScore]:
    """Martingale and bracket-compensator z-scores, all in closed form.

    Covers the compensated count M, the price X, the survival martingale m,
    the stopped enlarged martingale part of M, and the compensator defect of
    the stopped price bracket.
    """
    lam, psi, x0 = market.poisson_rate, market.jump_multiplier, market.initial_price
    k1, k2 = model.k1, model.k2
    rng = batch_rng(seed, 1)
    T = horizon

    n_T = rng.poisson(lam * T, n_paths)
    m_term = n_T - lam * T
    x_term = x0 * np.exp(-lam * psi * T) * (1.0 + psi) ** n_T

    rng2 = batch_rng(seed, 2)
    t1 = rng2.exponential(1.0 / lam, n_paths)
    t2 = t1 + rng2.exponential(1.0 / lam, n_paths)
    tau = k1 * t1 + k2 * t2
    decay = lam * k1 / k2

    # survival martingale at T
    m_T = np.ones(n_paths)
    mid = (t1 <= T) & (t2 > T)
    m_T[mid] = 1.0 + (k2 / k1) * (1.0 - np.exp(-decay * (T - t1[mid])))
    done = t2 <= T
    phi2 = np.exp(-decay * (t2[done] - t1[done]))
    m_T[done] = 1.0 + (k2 / k1) * (1.0 - phi2) - phi2

    # stopped enlarged martingale part of M at T
    s = np.minimum(T, tau)
    n_s = (t1 <= s).astype(float)  # tau < T2, so at most the first event
    mhat = n_s - lam * s + lam * np.maximum(0.0, s - t1)

    # bracket-compensator defect of the stopped price
    jump_sq = (x0 * psi * np.exp(-lam * psi * t1)) ** 2 * (t1 <= s)
    comp = psi * x0**2 * (1.0 - np.exp(-2.0 * lam * psi * np.minimum(s, t1))) / 2.0
    bracket_defect = jump_sq - comp

    # realized co-jump sum of X and m versus its compensator
    cojump = np.zeros(n_paths)
    sel = t2 <= T
    cojump[sel] = (
        x0 * np.exp(-lam * psi * t2[sel]) * (1.0 + psi) * psi
        * (-np.exp(-decay * (t2[sel] - t1[sel])))
    )
    upper = np.minimum(t2, T)
    rate_sum = lam * psi + decay
    xm_comp = np.where(
        t1 <= T,
        -lam * psi * x0 * (1.0 + psi) * np.exp(-lam * psi * t1)
        * (1.0 - np.exp(-rate_sum * (np.maximum(upper, t1) - t1))) / rate_sum,
        0.0,
    )
    xm_defect = cojump - xm_comp

    return [
        ZScore.from_samples("weighted/M-terminal", m_term),
        ZScore.from_samples("weighted/X-terminal", x_term, target=x0),
        ZScore.from_samples("weighted/m-terminal", m_T, target=1.0),
        ZScore.from_samples("weighted/Mhat-before-terminal", mhat),
        ZScore.from_samples("weighted/stopped-bracket-defect", bracket_defect),
        ZScore.from_samples("weighted/xm-bracket-defect", xm_defect),
    ]


def weighted_conditional_law(
    model: WeightedJumpTimeModel,
    t1: float,
    t: float,
    n_paths: int,
    seed: int,
) -> ZScore:
    """Conditional survival given the first event at t1 and no second by t.

    The empirical frequency of ``tau > t`` among paths with ``T2 > t`` must
    match the exponential decay factor.
    """
    if t <= t1:
        raise ValueError("need t > t1")
    lam = model.poisson_rate
    rng = batch_rng(seed, 3)
    t2 = t1 + rng.exponential(1.0 / lam, n_paths)
    alive = t2 > t
    tau = model.k1 * t1 + model.k2 * t2
    indic = (tau[alive] > t).astype(float)
    target = math.exp(-model.decay_rate * (t - t1))
    return ZScore.from_samples(f"weighted/conditional-law-t{t:g}", indic, target=target)


# ---------------------------------------------------------------------------
# last-passage model
# ---------------------------------------------------------------------------


def _interval_arrays(counts, flat, offsets, horizons, mu: float):
    """Per-event bookkeeping: path ids, within-path index, pre/post values."""
    ids = np.repeat(np.arange(len(counts)), counts)
    local = np.arange(len(flat)) - np.repeat(offsets, counts) + 1
    y_pre = mu * flat - (local - 1)
    y_post = y_pre - 1.0
    return ids, local, y_pre, y_post


def _crossing_count_and_tau(counts, flat, offsets, horizons, mu, level):
    """Vectorized upward-crossing count and last-crossing time per path."""
    n = len(counts)
    ids, local, y_pre, y_post = _interval_arrays(counts, flat, offsets, horizons, mu)
    cross_n = np.zeros(n)
    tau = np.zeros(n)
    # interval before the first event of each path: start value 0
    if len(flat):
        first_end = np.where(
            counts > 0, flat[np.minimum(offsets, len(flat) - 1)], horizons
        )
    else:
        first_end = horizons
    init_cross = (0.0 <= level) & (mu * first_end > level)
    cross_n += init_cross.astype(float)
    tau = np.where(init_cross, level / mu, tau)
    if len(flat):
        # intervals starting at each event: the next boundary is the following
        # event within the path, or the path's horizon for its last event
        is_last = local == counts[ids]
        next_t = np.concatenate([flat[1:], [0.0]])
        next_t[is_last] = horizons[ids[is_last]]
        y_end = mu * next_t - local
        crossing = (y_post <= level) & (y_end > level)
        np.add.at(cross_n, ids[crossing], 1.0)
        t_cross = flat[crossing] + (level - y_post[crossing]) / mu
        np.maximum.at(tau, ids[crossing], t_cross)
    return cross_n, tau


def lastpassage_statistics(
    model: LastPassageModel,
    psi: RuinFunction,
    horizon: float,
    n_paths: int,
    seed: int,
    t_eval: float = 6.0,
) -> list[ZScore]:
    """Martingale z-scores for the honest model.

    ``m`` is tested at a fixed horizon; the restarted enlarged martingale part
    of X and its bracket defect are tested at ``t_eval`` on certified paths
    (the certification horizon always exceeds it for the default parameters).
    """
    lam, sig = model.poisson_rate, model.sigma
    mu, a = model.drift_mu, model.level_a
    psi0 = float(psi(0.0))

    # --- fixed-horizon batch: survival martingale at T -------------------
    counts, flat, offsets = poisson_event_batch(lam, horizon, n_paths, seed + 11)
    horizons = np.full(n_paths, horizon)
    cross_n, _ = _crossing_count_and_tau(counts, flat, offsets, horizons, mu, a)
    y_T = mu * horizon - counts
    z_T = np.where(y_T >= a, psi(np.maximum(y_T - a, 0.0)), 1.0)
    m_T = z_T + (1.0 - psi0) * cross_n
    out = [ZScore.from_samples("lastpassage/m-terminal", m_T, target=1.0)]

    # --- certified batch: after-time martingale and bracket --------------
    from .models import certification_level

    x_cert = certification_level(model)
    target_level = a + x_cert
    counts2, flat2, offsets2, horizons2 = certified_event_batch(
        lam, mu, target_level, n_paths, seed + 13
    )
    if t_eval >= float(np.min(horizons2)):
        raise ValueError("t_eval must precede every certification horizon")
    _, tau2 = _crossing_count_and_tau(counts2, flat2, offsets2, horizons2, mu, a)

    # integrand tables on the level grid
    h = 0.002
    y_hi = float(mu * t_eval + 2.0)
    grid = np.arange(a, max(y_hi, a + 1.0) + h, h)
    phi1 = psi(grid - a - 1.0) - 1.0
    phi2 = psi(grid - a) - 1.0
    one_minus_z = 1.0 - psi(grid - a)
    xw = np.power(1.0 + sig, -grid)
    g_drift = lam * sig * xw * (phi1 - phi2) / one_minus_z
    g_brack = lam * sig**2 * xw**2 * phi1 / phi2 * (grid > a + 1.0)
    G_drift = _cumtrapz(grid, g_drift)
    G_brack = _cumtrapz(grid, g_brack)

    ids, local, y_pre, y_post = _interval_arrays(counts2, flat2, offsets2, horizons2, mu)
    in_win = (flat2 > tau2[ids]) & (flat2 <= t_eval)
    contrib = np.zeros(n_paths)

    def window_integral(G: np.ndarray) -> np.ndarray:
        total = np.zeros(n_paths)
        active = tau2 < t_eval
        y_end = mu * t_eval - _counts_upto(counts2, flat2, offsets2, t_eval)
        # ends of inner segments: pre-jump values of in-window events
        np.add.at(total, ids[in_win], np.interp(y_pre[in_win], grid, G))
        np.subtract.at(total, ids[in_win], np.interp(y_post[in_win], grid, G))
        total += np.where(active, np.interp(y_end, grid, G) - np.interp(np.full(n_paths, a), grid, G), 0.0)
        return total / mu

    n_at_eval = _counts_upto(counts2, flat2, offsets2, t_eval)
    y_eval = mu * t_eval - n_at_eval
    x_eval = np.power(1.0 + sig, -y_eval)
    x_tau = model.barrier_b  # price at the last passage equals the barrier
    active = tau2 < t_eval
    xhat = np.where(active, x_eval - x_tau, 0.0) + window_integral(G_drift)
    out.append(ZScore.from_samples("lastpassage/Xhat-after", xhat))

    jump_sq = np.zeros(n_paths)
    np.add.at(jump_sq, ids[in_win], (sig * np.power(1.0 + sig, -y_pre[in_win])) ** 2)
    bracket_defect = jump_sq - window_integral(G_brack)
    out.append(ZScore.from_samples("lastpassage/after-bracket-defect", bracket_defect))
    return out


def _counts_upto(counts, flat, offsets, t: float) -> np.ndarray:
    ids = np.repeat(np.arange(len(counts)), counts)
    out = np.zeros(len(counts))
    np.add.at(out, ids[flat <= t], 1.0)
    return out


def _cumtrapz(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def lastpassage_law_check(
    model: LastPassageModel,
    psi: RuinFunction,
    ts: tuple[float, ...],
    n_paths: int,
    seed: int,
) -> list[ZScore]:
    """Paired test of the survival law: indicator of tau > t minus Z_t.

    Uses certified paths so tau is (eps-cert) exact; the paired difference has
    mean zero by the projection property.
    """
    lam = model.poisson_rate
    mu, a = model.drift_mu, model.level_a
    from .models import certification_level

    target_level = a + certification_level(model)
    counts, flat, offsets, horizons = certified_event_batch(
        lam, mu, target_level, n_paths, seed + 17
    )
    _, tau = _crossing_count_and_tau(counts, flat, offsets, horizons, mu, a)
    out = []
    for t in ts:
        if t >= float(np.min(horizons)):
            raise ValueError("evaluation time beyond a certification horizon")
        y_t = mu * t - _counts_upto(counts, flat, offsets, t)
        z_t = np.where(y_t >= a, psi(np.maximum(y_t - a, 0.0)), 1.0)
        diff = (tau > t).astype(float) - z_t
        out.append(ZScore.from_samples(f"lastpassage/tau-law-t{t:g}", diff))
    return out
