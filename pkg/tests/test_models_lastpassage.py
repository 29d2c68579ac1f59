import math

import numpy as np
import pytest

from enlab.models import (
    LastPassageModel,
    adjustment_coefficient,
    azema_last_passage,
    build_ruin_function,
    certification_level,
    drifted_level_path,
    level_crossings,
    ruin_probability,
    simulate_certified_path,
    tau_last_passage,
)
from enlab.paths import ParameterError, PiecewiseJumpPath
from enlab.stats import lastpassage_law_check


@pytest.fixture(scope="module")
def model():
    return LastPassageModel(0.5, 1.0, 1.0)


@pytest.fixture(scope="module")
def psi(model):
    return build_ruin_function(model, n_paths=400_000, seed=42)


def test_derived_parameters(model):
    assert model.level_a == pytest.approx(-math.log(0.5) / math.log(2.0))
    assert model.drift_mu == pytest.approx(1.0 / math.log(2.0))
    assert model.drift_mu > model.poisson_rate


def test_model_validation():
    with pytest.raises(ParameterError):
        LastPassageModel(1.0, 1.0, 1.0)  # barrier must be interior
    with pytest.raises(ParameterError):
        LastPassageModel(0.5, -1.0, 1.0)
    with pytest.raises(ParameterError):
        LastPassageModel(0.5, 1.0, 1.0, eps_cert=2.0)


def test_adjustment_coefficient_closed_case(model):
    # rate 1, drift 1/ln 2: the positive root of e^R - 1 = R/ln2 is ln 2
    r = adjustment_coefficient(1.0, model.drift_mu)
    assert r == pytest.approx(math.log(2.0), rel=1e-12)
    assert certification_level(model) == pytest.approx(-math.log(1e-6) / r)


def test_ruin_function_invariants(model, psi):
    assert ruin_probability(-0.3, model, table=psi) == 1.0
    vals = np.asarray(psi.values)
    assert np.all((vals >= 0.0) & (vals <= 1.0))
    assert np.all(np.diff(vals) <= 1e-12)
    assert psi(psi.x_max + 10.0) <= 1e-6


def test_ruin_at_zero_matches_closed_form(model, psi):
    # classical boundary value: rate * mean claim / premium rate
    want = model.poisson_rate / model.drift_mu
    se = math.sqrt(want * (1 - want) / psi.n_paths)
    assert abs(psi(0.0) - want) < 3.0 * se + model.eps_cert


def test_monte_carlo_oracle_consistency(model, psi):
    """Fresh-seed first-passage estimates agree with the table."""
    from enlab.montecarlo import simulate_max_drop

    n = 400_000
    drops = simulate_max_drop(
        model.poisson_rate, model.drift_mu, certification_level(model), n, seed=777
    )
    for x in (0.0, 1.0, 2.5):
        est = float(np.mean(drops > x))
        se = math.sqrt(max(est * (1 - est), 1e-12) / n)
        se_t = math.sqrt(max(float(psi(x)) * (1 - float(psi(x))), 1e-12) / psi.n_paths)
        assert abs(float(psi(x)) - est) < 3.0 * math.hypot(se, se_t) + 1e-4


def test_tau_monotone_path_without_events():
    # tiny barrier log makes the level almost zero; drifting up and never
    # dipping, the last visit happens at the start
    model = LastPassageModel(1.0 - 1e-12, 1.0, 1.0)
    assert model.level_a == pytest.approx(0.0, abs=1e-9)
    path = PiecewiseJumpPath.counting((), 30.0)
    tau, certified = tau_last_passage(path, model)
    assert tau == pytest.approx(0.0, abs=1e-9)
    assert certified


def test_tau_linear_interpolation_on_final_excursion(model):
    # one event dips the level path below a; the crossing solves mu*t - 1 = a
    mu, a = model.drift_mu, model.level_a
    t_event = (a + 0.5) / mu  # pre-jump level a + 0.5, post-jump a - 0.5
    path = PiecewiseJumpPath.counting((t_event,), 40.0)
    tau, certified = tau_last_passage(path, model)
    assert certified
    assert tau == pytest.approx((a + 1.0) / mu)
    y = drifted_level_path(path, model)
    assert y.value(tau) == pytest.approx(a)


def test_certified_simulation(model):
    for i in range(10):
        path = simulate_certified_path(model, seed=5, path_index=i)
        tau, certified = tau_last_passage(path, model)
        assert certified
        y = drifted_level_path(path, model)
        assert y.value(path.horizon) - model.level_a > certification_level(model)
        crossings = level_crossings(y, model.level_a)
        assert crossings and crossings[-1] == tau


def test_uncertified_flag_on_short_horizon(model):
    path = PiecewiseJumpPath.counting((0.5,), 2.0)
    tau, certified = tau_last_passage(path, model)
    assert not certified


def test_azema_invariants(model, psi):
    for i in range(15):
        path = simulate_certified_path(model, seed=31, path_index=i)
        az = azema_last_passage(path, model, psi)
        y = drifted_level_path(path, model)
        a = model.level_a
        ts = np.linspace(0.0, path.horizon, 211)
        z = np.array([az.z.value(t) for t in ts])
        m = np.array([az.m.value(t) for t in ts])
        d = np.array([az.d_of.value(t) for t in ts])
        assert np.all((z >= -1e-12) & (z <= 1.0 + 1e-12))
        assert np.max(np.abs(m - z - d)) < 1e-10
        assert np.all(np.diff(d) >= -1e-12)
        for t in path.event_times:
            ym = y.left_limit(t)
            zt = az.z_tilde(t)
            direct = 1.0 + (float(psi(ym - 1.0 - a)) - 1.0 if ym - 1.0 > a else 0.0)
            assert abs(zt - direct) < 1e-10
            # saturation charges exactly on the unit band above the level
            if abs(zt - 1.0) < 1e-12 and az.z.left_limit(t) < 1.0 - 1e-12:
                assert a < ym <= a + 1.0
            # the vanishing set is never charged
            assert not (zt < 1e-12 and az.z.left_limit(t) > 1e-12)


def test_honest_time_surrogate(model):
    """tau restricted to {tau < t} is computable from the path up to t."""
    for i in range(10):
        path = simulate_certified_path(model, seed=57, path_index=i)
        tau, _ = tau_last_passage(path, model)
        y = drifted_level_path(path, model)
        crossings = level_crossings(y, model.level_a)
        for t in np.linspace(0.5, path.horizon, 7):
            if tau < t:
                before = [c for c in crossings if c < t]
                assert before and before[-1] == tau


def test_tau_law_matches_survival(model, psi):
    """Paired test: indicator of tau > t against Z_t, zero-mean by projection."""
    for z in lastpassage_law_check(model, psi, (1.0, 2.0), 50_000, seed=11):
        assert abs(z.z) < 4.0


def test_phi_paths_emitted(model, psi):
    path = simulate_certified_path(model, seed=31, path_index=0)
    az = azema_last_passage(path, model, psi)
    y = drifted_level_path(path, model)
    a = model.level_a
    t = 0.5 * (az.tau + path.horizon)
    ym = y.value(t)
    assert az.phi1.value(t) == pytest.approx(float(psi(ym - a - 1.0)) - 1.0, abs=1e-12)
    assert az.phi2.value(t) == pytest.approx(float(psi(ym - a)) - 1.0, abs=1e-12)
