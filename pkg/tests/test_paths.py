import json
import math
from pathlib import Path

import numpy as np
import pytest

from enlab.paths import (
    MarketModel,
    ModelError,
    ParameterError,
    PathConstructionError,
    PiecewiseJumpPath,
    compensated_martingale,
    path_rng,
    simulate_poisson,
    stochastic_exponential,
)
from enlab.segments import constant, linear

GOLDEN = Path(__file__).parent / "data" / "counting_path.json"


def test_zero_rate_has_no_events():
    path = simulate_poisson(0.0, 5.0, seed=1)
    assert path.event_times == ()
    assert path.value(5.0) == 0.0


def test_determinism_bit_for_bit():
    a = simulate_poisson(2.0, 10.0, seed=123)
    b = simulate_poisson(2.0, 10.0, seed=123)
    assert a.event_times == b.event_times
    c = simulate_poisson(2.0, 10.0, seed=124)
    assert a.event_times != c.event_times


def test_mean_event_count_within_three_sigma():
    # pooled over seeds: per-path variance lam*T
    n, lam, horizon = 20_000, 2.0, 10.0
    counts = np.array(
        [len(simulate_poisson(lam, horizon, seed=9, path_index=i).event_times) for i in range(n)]
    )
    se = math.sqrt(lam * horizon / n)
    assert abs(counts.mean() - lam * horizon) < 3.0 * se


def test_parameter_errors():
    with pytest.raises(ParameterError):
        simulate_poisson(-1.0, 1.0, seed=0)
    with pytest.raises(ParameterError):
        simulate_poisson(1.0, 0.0, seed=0)


def test_compensated_martingale_no_events():
    path = PiecewiseJumpPath.counting((), 1.0)
    m = compensated_martingale(path, 1.0)
    assert m.value(1.0) == pytest.approx(-1.0)


def test_compensated_martingale_single_event():
    path = PiecewiseJumpPath.counting((0.5,), 1.0)
    m = compensated_martingale(path, 2.0)
    assert m.value(1.0) == pytest.approx(1.0 - 2.0)
    assert m.left_limit(0.5) == pytest.approx(-1.0)
    assert m.value(0.5) == pytest.approx(0.0)


def test_compensated_martingale_rejects_non_unit_jumps():
    bad = PiecewiseJumpPath(
        1.0, 0.0, (0.5,), (2.0,), (constant(0.0), constant(2.0))
    )
    with pytest.raises(ModelError):
        compensated_martingale(bad, 1.0)


def test_market_model_validation():
    with pytest.raises(ParameterError):
        MarketModel(1.0, -1.0)
    with pytest.raises(ParameterError):
        MarketModel(1.0, 0.0)
    with pytest.raises(ParameterError):
        MarketModel(0.0, 0.5)


def test_stochastic_exponential_no_events():
    path = PiecewiseJumpPath.counting((), 1.0)
    x = stochastic_exponential(path, MarketModel(1.0, 0.5))
    assert x.value(1.0) == pytest.approx(math.exp(-0.5))


def test_stochastic_exponential_jump_relation():
    path = simulate_poisson(1.0, 6.0, seed=5)
    assert path.event_times, "need at least one event"
    x = stochastic_exponential(path, MarketModel(1.0, 0.5))
    for t in path.event_times:
        assert x.value(t) == pytest.approx(x.left_limit(t) * 1.5, rel=1e-12)


def test_stochastic_exponential_matches_piecewise_ode_oracle():
    """Exact stepping oracle: between events dX = -lam*psi*X dt, at events X *= 1+psi."""
    lam, psi, x0 = 1.3, 0.7, 2.0
    path = simulate_poisson(lam, 8.0, seed=17)
    x = stochastic_exponential(path, MarketModel(lam, psi, x0))
    val = x0
    prev = 0.0
    for t in path.event_times:
        val *= math.exp(-lam * psi * (t - prev))
        assert x.left_limit(t) == pytest.approx(val, rel=1e-10)
        val *= 1.0 + psi
        assert x.value(t) == pytest.approx(val, rel=1e-10)
        prev = t
    val *= math.exp(-lam * psi * (path.horizon - prev))
    assert x.value(path.horizon) == pytest.approx(val, rel=1e-10)


def test_jump_consistency_everywhere():
    path = simulate_poisson(2.0, 5.0, seed=3)
    m = compensated_martingale(path, 2.0)
    for proc in (path, m):
        for t in proc.event_times:
            assert proc.value(t) == pytest.approx(
                proc.left_limit(t) + proc.jump_at(t), rel=1e-9, abs=1e-9
            )


def test_event_collision_rejected():
    with pytest.raises(PathConstructionError):
        PiecewiseJumpPath(
            1.0, 0.0, (0.5, 0.5), (1.0, 1.0),
            (constant(0.0), constant(1.0), constant(2.0)),
        )


def test_counter_based_seeding_is_order_free():
    serial = [simulate_poisson(1.0, 5.0, seed=7, path_index=i).event_times for i in range(4)]
    shuffled = [simulate_poisson(1.0, 5.0, seed=7, path_index=i).event_times for i in (2, 0, 3, 1)]
    assert shuffled[1] == serial[0]
    assert shuffled[0] == serial[2]


def test_json_round_trip_and_golden_file():
    path = simulate_poisson(1.0, 4.0, seed=11)
    m = compensated_martingale(path, 1.0)
    back = PiecewiseJumpPath.from_json(m.to_json())
    ts = np.linspace(0, 4.0, 23)
    assert np.allclose([m.value(t) for t in ts], [back.value(t) for t in ts], atol=0)

    golden = PiecewiseJumpPath.from_json(GOLDEN.read_text())
    assert golden.event_times == (0.75, 2.5)
    assert golden.value(3.0) == pytest.approx(2.0 - 0.5 * 3.0)
    assert json.loads(golden.to_json()) == json.loads(GOLDEN.read_text())
