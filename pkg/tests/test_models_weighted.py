import math

import numpy as np
import pytest

from enlab.models import (
    HorizonTooShortError,
    WeightedJumpTimeModel,
    azema_weighted,
    simulate_weighted_path,
    tau_weighted,
)
from enlab.paths import ParameterError, PiecewiseJumpPath
from enlab.stats import weighted_conditional_law


def make_path(events, horizon):
    return PiecewiseJumpPath.counting(events, horizon)


def test_model_validation():
    with pytest.raises(ParameterError):
        WeightedJumpTimeModel(0.6, 0.6, 1.0)
    with pytest.raises(ParameterError):
        WeightedJumpTimeModel(-0.1, 1.1, 1.0)
    with pytest.raises(ParameterError):
        WeightedJumpTimeModel(0.5, 0.5, 0.0)


def test_tau_arithmetic():
    model = WeightedJumpTimeModel(0.9, 0.1, 1.0)
    assert tau_weighted(make_path((1.0, 3.0), 5.0), model) == pytest.approx(1.2)
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    tau = tau_weighted(make_path((1.0, 3.0), 5.0), model)
    assert tau == pytest.approx(2.0)
    assert 1.0 < tau < 3.0


def test_tau_needs_two_events():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    with pytest.raises(HorizonTooShortError):
        tau_weighted(make_path((1.0,), 5.0), model)


def test_survival_is_one_before_first_event():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    az = azema_weighted(make_path((1.0, 3.0), 5.0), model)
    for t in (0.0, 0.4, 0.999):
        assert az.z.value(t) == 1.0
        assert az.z_tilde(t) == 1.0


def test_survival_closed_form_between_events():
    # unit rate, equal weights, first event at 1: Z(2) = e^{-1}
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    az = azema_weighted(make_path((1.0, 3.0), 5.0), model)
    assert az.z.value(2.0) == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_vanishing_set_charged_exactly_at_second_event():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    az = azema_weighted(make_path((1.0, 3.0), 5.0), model)
    assert az.z.value(3.0) == 0.0
    assert az.z.value(4.5) == 0.0
    assert az.z_tilde(3.0) == pytest.approx(0.0, abs=1e-15)
    assert az.z.left_limit(3.0) == pytest.approx(math.exp(-2.0), rel=1e-13)
    assert az.z.left_limit(3.0) > 0.0
    # the saturation set is never charged
    for t in (1.0, 2.0, 3.0):
        z_minus = az.z.left_limit(t)
        assert not (az.z_tilde(t) >= 1.0 - 1e-12 and z_minus < 1.0 - 1e-12)


def test_no_atom_at_first_event():
    # left-open integrand convention: m does not jump at T1
    model = WeightedJumpTimeModel(0.3, 0.7, 2.0)
    az = azema_weighted(make_path((0.5, 2.0), 4.0), model)
    assert az.delta_m_at(0.5) == 0.0
    assert az.m.value(0.5) == pytest.approx(az.m.left_limit(0.5))


def test_triple_invariants_on_simulated_paths():
    model = WeightedJumpTimeModel(0.35, 0.65, 1.4)
    for i in range(25):
        path = simulate_weighted_path(model, 6.0, 77, i)
        az = azema_weighted(path, model)
        t1, t2 = path.event_times[:2]
        assert t1 < az.tau < t2
        ts = np.linspace(0.0, path.horizon, 101)
        z = np.array([az.z.value(t) for t in ts])
        m = np.array([az.m.value(t) for t in ts])
        d = np.array([az.d_of.value(t) for t in ts])
        assert np.all((z >= 0.0) & (z <= 1.0))
        assert np.max(np.abs(m - z - d)) < 1e-10
        assert np.all(np.diff(d) >= -1e-12)
        for t in path.event_times:
            zt = az.z_tilde(t)
            assert abs(zt - (az.z.left_limit(t) + az.delta_m_at(t))) < 1e-10
            assert -1e-12 <= zt <= 1.0 + 1e-12


def test_horizon_extension_policy():
    model = WeightedJumpTimeModel(0.5, 0.5, 0.2)  # slow rate forces extension
    path = simulate_weighted_path(model, 1.0, 3, 0, margin=1.0)
    assert len(path.event_times) >= 2
    assert path.horizon >= path.event_times[1] + 1.0


def test_conditional_law_oracle():
    """Empirical conditional survival matches the exponential decay factor."""
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    z = weighted_conditional_law(model, t1=1.0, t=2.0, n_paths=100_000, seed=5)
    assert abs(z.z) < 3.0


def test_gamma_left_limits():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    az = azema_weighted(make_path((1.0, 3.0), 5.0), model)
    assert az.gamma.left_limit(1.0) == 0.0
    assert az.gamma.left_limit(3.0) == pytest.approx(-math.exp(-2.0), rel=1e-13)
    assert az.gamma.value(3.5) == 0.0
