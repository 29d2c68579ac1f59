import math

import numpy as np
import pytest

from enlab.calculus import (
    InternalConsistencyError,
    f_brackets,
    g_bracket_stopped,
    g_drift_bracket_after,
    g_drift_stopped,
    interval_difference,
    intersect_intervals,
    jeulin_hat_path,
    region_above,
    unit_coefficient_path,
)
from enlab.models import (
    LastPassageModel,
    WeightedJumpTimeModel,
    azema_last_passage,
    azema_weighted,
    build_ruin_function,
    drifted_level_path,
    simulate_certified_path,
    simulate_weighted_path,
    tau_last_passage,
)
from enlab.paths import (
    MarketModel,
    ModelError,
    PiecewiseJumpPath,
    compensated_martingale,
    stochastic_exponential,
)


@pytest.fixture(scope="module")
def weighted_setup():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    market = MarketModel(1.0, 0.5)
    path = PiecewiseJumpPath.counting((1.0, 3.0), 6.0)
    az = azema_weighted(path, model)
    x = stochastic_exponential(path, market)
    return model, market, path, az, x


@pytest.fixture(scope="module")
def honest_setup():
    model = LastPassageModel(0.5, 1.0, 1.0)
    market = MarketModel(1.0, 1.0)
    psi = build_ruin_function(model, n_paths=200_000, seed=8)
    path = simulate_certified_path(model, seed=13, path_index=1)
    az = azema_last_passage(path, model, psi)
    x = stochastic_exponential(path, market)
    return model, market, psi, path, az, x


# ---------------------------------------------------------------------------
# interval helpers
# ---------------------------------------------------------------------------


def test_interval_difference():
    base = ((0.0, 5.0),)
    minus = ((1.0, 2.0), (4.0, 6.0))
    assert interval_difference(base, minus) == ((0.0, 1.0), (2.0, 4.0))


def test_region_above_for_drifted_path():
    model = LastPassageModel(0.5, 1.0, 1.0)
    mu, a = model.drift_mu, model.level_a
    path = PiecewiseJumpPath.counting((1.0,), 5.0)
    y = drifted_level_path(path, model)
    regions = region_above(y, a)
    # rises through the level at a/mu; the event at 1 drops it below
    # (pre-jump mu, post-jump mu - 1 < a); re-crosses when mu*t - 1 = a
    assert len(regions) == 2
    assert regions[0][0] == pytest.approx(a / mu)
    assert regions[0][1] == 1.0
    assert regions[1][0] == pytest.approx((a + 1.0) / mu)
    assert regions[1][1] == 5.0


# ---------------------------------------------------------------------------
# weighted model: base brackets
# ---------------------------------------------------------------------------


def test_xm_bracket_vanishes_before_first_event(weighted_setup):
    model, market, path, az, x = weighted_setup
    _, xm = f_brackets(x, market, az)
    assert xm.measure(0.0, 1.0) == 0.0
    assert xm.support_intervals() == ((1.0, 3.0),)


def test_xx_bracket_density(weighted_setup):
    model, market, path, az, x = weighted_setup
    xx, _ = f_brackets(x, market, az)
    for t in (0.5, 2.0, 4.0):
        want = market.poisson_rate * (x.value(t) * market.jump_multiplier) ** 2
        assert xx.density_at(t) == pytest.approx(want, rel=1e-12)


def test_xm_density_closed_form(weighted_setup):
    model, market, path, az, x = weighted_setup
    _, xm = f_brackets(x, market, az)
    t = 2.0
    phi = math.exp(-model.decay_rate * (t - 1.0))
    want = -market.poisson_rate * market.jump_multiplier * x.value(t) * phi
    assert xm.density_at(t) == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# weighted model: enlarged bracket and drift
# ---------------------------------------------------------------------------


def test_g_bracket_closed_form_support(weighted_setup):
    model, market, path, az, x = weighted_setup
    closed = g_bracket_stopped(x, market, az, weighted=model)
    assert closed.support_intervals() == ((0.0, 1.0),)
    lam, psi = market.poisson_rate, market.jump_multiplier
    t = 0.5
    assert closed.density_at(t) == pytest.approx(lam * psi**2 * x.value(t) ** 2, rel=1e-12)
    # positive mass before the first event, none after
    assert closed.measure(0.0, 1.0) > 0.0
    assert closed.measure(1.0, az.tau) == 0.0


def test_g_bracket_routes_agree(weighted_setup):
    model, market, path, az, x = weighted_setup
    closed, general = g_bracket_stopped(x, market, az, weighted=model, return_both=True)
    ts = np.linspace(0.01, az.tau * 0.999, 17)
    for t in ts:
        assert general.density_at(float(t)) == pytest.approx(
            closed.density_at(float(t)), rel=1e-8, abs=1e-12
        )


def test_internal_consistency_trap(weighted_setup):
    model, market, path, az, x = weighted_setup
    from dataclasses import replace

    bad_az = replace(az, z=az.z.scaled(1.0 + 1e-5))
    with pytest.raises(InternalConsistencyError):
        g_bracket_stopped(x, market, bad_az, weighted=model)


def test_g_drift_support_and_density(weighted_setup):
    model, market, path, az, x = weighted_setup
    pair = g_drift_stopped(x, market, az, weighted=model)
    assert pair.drift.support_intervals() == ((1.0, az.tau),)
    t = 0.5 * (1.0 + az.tau)
    want = -market.poisson_rate * market.jump_multiplier * x.value(t)
    assert pair.drift.density_at(t) == pytest.approx(want, rel=1e-12)
    assert pair.drift.measure(0.0, 1.0) == 0.0
    # supports of drift and bracket are disjoint on every weighted path
    assert not any(
        a < 1.0 for a, _ in pair.drift.support_intervals()
    )
    assert pair.window.bounds() == (0.0, az.tau)


def test_bracket_nonnegative(weighted_setup):
    model, market, path, az, x = weighted_setup
    pair = g_drift_stopped(x, market, az, weighted=model)
    for t in np.linspace(0.0, az.tau, 33):
        assert pair.bracket.density_at(float(t)) >= 0.0


# ---------------------------------------------------------------------------
# honest model: after-time pair
# ---------------------------------------------------------------------------


def test_after_pair_band_vs_above(honest_setup):
    model, market, psi, path, az, x = honest_setup
    tau, cert = tau_last_passage(path, model)
    pair = g_drift_bracket_after(x, path, model, az, cert)
    a = model.level_a
    y = drifted_level_path(path, model)
    above = intersect_intervals(region_above(y, a + 1.0), tau, path.horizon)
    band = interval_difference(((tau, path.horizon),), above)
    # on the band: drift density -rate*sigma*X and zero bracket
    lo, hi = band[0]
    t = lo + 0.3 * (hi - lo)
    assert pair.drift.density_at(t) == pytest.approx(
        -model.poisson_rate * model.sigma * x.value(t), rel=1e-12
    )
    assert pair.bracket.density_at(t) == 0.0
    # off the band both densities are charged, with the documented ratios
    if above:
        lo2, hi2 = above[0]
        t2 = 0.5 * (lo2 + hi2)
        ym = y.value(t2)
        phi1 = float(psi(ym - a - 1.0)) - 1.0
        phi2 = float(psi(ym - a)) - 1.0
        want_drift = -model.poisson_rate * model.sigma * x.value(t2) * (phi1 - phi2) / (-phi2)
        want_brack = model.poisson_rate * model.sigma**2 * phi1 * x.value(t2) ** 2 / phi2
        assert pair.drift.density_at(t2) == pytest.approx(want_drift, rel=1e-10)
        assert pair.bracket.density_at(t2) == pytest.approx(want_brack, rel=1e-10)
        assert pair.bracket.density_at(t2) >= 0.0


def test_after_pair_band_mass_positive(honest_setup):
    model, market, psi, path, az, x = honest_setup
    tau, cert = tau_last_passage(path, model)
    pair = g_drift_bracket_after(x, path, model, az, cert)
    y = drifted_level_path(path, model)
    band = interval_difference(
        ((tau, path.horizon),),
        intersect_intervals(region_above(y, model.level_a + 1.0), tau, path.horizon),
    )
    mass = sum(pair.drift.measure(lo - 1e-15, hi, absolute=True) for lo, hi in band)
    assert mass > 0.0


def test_after_pair_requires_certification(honest_setup):
    model, market, psi, path, az, x = honest_setup
    with pytest.raises(ModelError):
        g_drift_bracket_after(x, path, model, az, certified=False)


# ---------------------------------------------------------------------------
# pathwise enlarged martingale parts
# ---------------------------------------------------------------------------


def test_hat_path_weighted_closed_form(weighted_setup):
    model, market, path, az, x = weighted_setup
    lam = model.poisson_rate
    M = compensated_martingale(path, lam)
    hat = jeulin_hat_path(M, unit_coefficient_path(path.horizon), lam, az, "before")
    tau = az.tau
    for t in (0.3, 1.0, 1.5, tau, 2.5, 6.0):
        want = M.value(min(t, tau)) + lam * max(0.0, min(t, tau) - 1.0)
        assert hat.value(t) == pytest.approx(want, abs=1e-9)
    # before the first event the correction is inactive
    assert hat.value(0.7) == pytest.approx(M.value(0.7), abs=1e-12)


def test_hat_path_degenerate_time_returns_input():
    # a triple with survival one and flat m: the enlargement adds nothing
    from enlab.models import AzemaTriple
    from enlab.paths import PiecewiseJumpPath, simulate_poisson, compensated_martingale
    from enlab.segments import constant

    horizon = 4.0
    flat1 = PiecewiseJumpPath(horizon, 1.0, (), (), (constant(1.0),))
    flat0 = PiecewiseJumpPath(horizon, 0.0, (), (), (constant(0.0),))
    az = AzemaTriple(z=flat1, m=flat1, d_of=flat0, delta_m_atoms=(), gamma=flat0,
                     tau=horizon)
    path = simulate_poisson(1.0, horizon, seed=2)
    M = compensated_martingale(path, 1.0)
    hat = jeulin_hat_path(M, unit_coefficient_path(horizon), 1.0, az, "before")
    for t in np.linspace(0, horizon, 17):
        assert hat.value(float(t)) == pytest.approx(M.value(float(t)), abs=1e-12)


def test_hat_path_after_starts_at_zero(honest_setup):
    model, market, psi, path, az, x = honest_setup
    lam = model.poisson_rate
    M = compensated_martingale(path, lam)
    hat = jeulin_hat_path(M, unit_coefficient_path(path.horizon), lam, az, "after")
    assert hat.value(0.0) == 0.0
    assert hat.value(az.tau) == pytest.approx(0.0, abs=1e-12)
    assert abs(hat.value(path.horizon)) > 0.0
