import numpy as np
import pytest

from enlab.models import LastPassageModel, WeightedJumpTimeModel, build_ruin_function
from enlab.montecarlo import certified_event_batch, poisson_event_batch, simulate_max_drop
from enlab.paths import MarketModel
from enlab.stats import (
    lastpassage_law_check,
    lastpassage_statistics,
    weighted_conditional_law,
    weighted_statistics,
)

N_QUICK = 30_000


@pytest.fixture(scope="module")
def lp_model():
    return LastPassageModel(0.5, 1.0, 1.0)


@pytest.fixture(scope="module")
def psi(lp_model):
    return build_ruin_function(lp_model, n_paths=500_000, seed=1)


def test_event_batch_counts_match_poisson_mean():
    counts, flat, offsets = poisson_event_batch(2.0, 5.0, 50_000, seed=3)
    assert abs(counts.mean() - 10.0) < 4.0 * np.sqrt(10.0 / 50_000)
    # per-path slices are sorted
    for i in (0, 17, 49_999):
        sl = flat[offsets[i] : offsets[i] + counts[i]]
        assert np.all(np.diff(sl) >= 0)


def test_certified_batch_reaches_target(lp_model):
    target = lp_model.level_a + 3.0
    counts, flat, offsets, horizons = certified_event_batch(
        1.0, lp_model.drift_mu, target, 2_000, seed=4
    )
    y_end = lp_model.drift_mu * horizons - counts
    assert np.all(y_end >= target)


def test_max_drop_distribution_tail(lp_model):
    drops = simulate_max_drop(1.0, lp_model.drift_mu, 20.0, 100_000, seed=6)
    # survival at zero equals the classical boundary value rate/drift
    p0 = float(np.mean(drops > 0.0))
    want = 1.0 / lp_model.drift_mu
    assert abs(p0 - want) < 4.0 * np.sqrt(want * (1 - want) / 100_000)


def test_weighted_zscores_within_bounds():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    market = MarketModel(1.0, 0.5)
    for z in weighted_statistics(model, market, 10.0, N_QUICK, seed=31):
        assert abs(z.z) < 4.5, z


def test_weighted_conditional_law_zscore():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    z = weighted_conditional_law(model, 0.7, 1.9, N_QUICK, seed=32)
    assert abs(z.z) < 4.5


def test_lastpassage_zscores_within_bounds(lp_model, psi):
    for z in lastpassage_statistics(lp_model, psi, 10.0, N_QUICK, seed=33):
        assert abs(z.z) < 4.5, z


def test_lastpassage_law_zscores(lp_model, psi):
    for z in lastpassage_law_check(lp_model, psi, (0.5, 1.0, 2.0), N_QUICK, seed=34):
        assert abs(z.z) < 4.5, z
