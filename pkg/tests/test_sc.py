import json
import math

import numpy as np
import pytest

from enlab import tree as T
from enlab.calculus import g_drift_stopped
from enlab.measures import DensityPiece, DriftBracketPair, PathMeasure, Window
from enlab.models import WeightedJumpTimeModel, azema_weighted, simulate_weighted_path
from enlab.paths import MarketModel, PiecewiseJumpPath, stochastic_exponential
from enlab.sc import (
    SCVerdict,
    check_constant_predictable,
    check_sc,
    check_sc_split,
    converse_mechanism_tree,
    evanescence_scan,
    evanescence_scan_tree,
    positive_case_verify,
)
from enlab.segments import constant, linear


def pair_on_full_window(drift, bracket, horizon=1.0):
    return DriftBracketPair(drift, bracket, Window("full", horizon))


def test_zero_drift_is_satisfied():
    bracket = PathMeasure(1.0, (DensityPiece(0.0, 1.0, constant(2.0)),))
    verdict = check_sc(pair_on_full_window(PathMeasure(1.0), bracket))
    assert verdict.status == "satisfied"
    assert verdict.residual == 0.0
    assert all(v == 0.0 for _, v in verdict.lambda_hat_samples) or not verdict.lambda_hat_samples


def test_equal_densities_give_unit_magnitude_density():
    bracket = PathMeasure(1.0, (DensityPiece(0.0, 1.0, constant(2.0)),))
    drift_neg = PathMeasure(1.0, (DensityPiece(0.0, 1.0, constant(-2.0)),))
    verdict = check_sc(pair_on_full_window(drift_neg, bracket))
    assert verdict.status == "satisfied"
    # canonical decomposition sign: drift equal to minus the bracket extracts +1
    assert all(v == pytest.approx(1.0) for _, v in verdict.lambda_hat_samples)
    drift_pos = PathMeasure(1.0, (DensityPiece(0.0, 1.0, constant(2.0)),))
    verdict2 = check_sc(pair_on_full_window(drift_pos, bracket))
    assert verdict2.status == "satisfied"
    assert all(v == pytest.approx(-1.0) for _, v in verdict2.lambda_hat_samples)
    assert verdict2.l2_norm == pytest.approx(2.0, rel=0.2)


def test_disjoint_support_is_violated_with_witness():
    bracket = PathMeasure(2.0, (DensityPiece(0.0, 1.0, constant(1.0)),))
    drift = PathMeasure(2.0, (DensityPiece(1.0, 2.0, constant(0.5)),))
    verdict = check_sc(pair_on_full_window(drift, bracket, horizon=2.0))
    assert verdict.status == "violated"
    assert verdict.witness_intervals == ((1.0, 2.0),)
    assert verdict.residual == pytest.approx(0.5)


def test_unmatched_atom_is_witness():
    bracket = PathMeasure(1.0, (DensityPiece(0.0, 1.0, constant(1.0)),))
    drift = PathMeasure(1.0, (), ((0.5, 0.3),))
    verdict = check_sc(pair_on_full_window(drift, bracket))
    assert verdict.status == "violated"
    assert verdict.witness_atoms == (0.5,)


def test_matched_atoms_extract_ratio():
    bracket = PathMeasure(1.0, (), ((0.5, 2.0),))
    drift = PathMeasure(1.0, (), ((0.5, -1.0),))
    verdict = check_sc(pair_on_full_window(drift, bracket))
    assert verdict.status == "satisfied"
    assert verdict.lambda_hat_samples == ((0.5, 0.5),)


def test_split_combination_rules():
    sat = SCVerdict(status="satisfied")
    bad = SCVerdict(status="violated", residual=1.0, witness_intervals=((0.0, 1.0),))
    assert check_sc_split(sat, sat).status == "satisfied"
    assert check_sc_split(bad, sat).status == "violated"
    assert check_sc_split(sat, bad).witness_intervals == ((0.0, 1.0),)
    assert check_sc_split(bad, None).status == "violated"


def test_constant_predictable_path_cases():
    five = PiecewiseJumpPath(1.0, 5.0, (), (), (constant(5.0),))
    assert check_constant_predictable(five).status == "satisfied"
    ramp = PiecewiseJumpPath(1.0, 0.0, (), (), (linear(0.0, 1.0),))
    verdict = check_constant_predictable(ramp)
    assert verdict.status == "violated"
    assert verdict.witness_intervals[0][0] < 0.01


def test_monotonicity_of_shrinking_window():
    # restricting both measures to a smaller window never flips satisfied
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    market = MarketModel(1.0, 0.5)
    path = simulate_weighted_path(model, 8.0, 21, 0)
    az = azema_weighted(path, model)
    x = stochastic_exponential(path, market)
    pair = g_drift_stopped(x, market, az, weighted=model)
    t1 = path.event_times[0]
    sub = DriftBracketPair(
        pair.drift.restricted(0.0, t1), pair.bracket.restricted(0.0, t1),
        Window("stopped", path.horizon, t1),
    )
    assert check_sc(sub).status == "satisfied"
    full = check_sc(pair)
    assert full.status == "violated"


def test_scale_equivariance():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    path = simulate_weighted_path(model, 8.0, 22, 0)
    az = azema_weighted(path, model)
    c = 3.0
    m1 = MarketModel(1.0, 0.5, 1.0)
    m2 = MarketModel(1.0, 0.5, c)
    x1 = stochastic_exponential(path, m1)
    x2 = stochastic_exponential(path, m2)
    p1 = g_drift_stopped(x1, m1, az, weighted=model)
    p2 = g_drift_stopped(x2, m2, az, weighted=model)
    v1, v2 = check_sc(p1), check_sc(p2)
    assert v1.status == v2.status == "violated"
    assert v2.residual == pytest.approx(c * v1.residual, rel=1e-10)
    t = 0.5 * (path.event_times[0] + az.tau)
    assert p2.drift.density_at(t) == pytest.approx(c * p1.drift.density_at(t), rel=1e-12)
    assert p2.bracket.density_at(0.3) == pytest.approx(
        c**2 * p1.bracket.density_at(0.3), rel=1e-12
    )


def test_verdict_json_schema():
    verdict = SCVerdict(
        status="violated", residual=0.25,
        lambda_hat_samples=((0.1, 2.0),),
        witness_intervals=((1.0, 2.0),), l2_norm=0.5,
    )
    data = json.loads(verdict.to_json())
    assert data["status"] == "violated"
    assert data["witness"]["intervals"] == [[1.0, 2.0]]
    assert data["lambda_hat_samples"] == [[0.1, 2.0]]


def test_verdict_invariants_enforced():
    with pytest.raises(ValueError):
        SCVerdict(status="satisfied", witness_intervals=((0.0, 1.0),))
    with pytest.raises(ValueError):
        SCVerdict(status="violated")


# ---------------------------------------------------------------------------
# evanescence scans
# ---------------------------------------------------------------------------


def test_weighted_scan_charges_vanishing_set_on_every_path():
    model = WeightedJumpTimeModel(0.5, 0.5, 1.0)
    reports = evanescence_scan(model, 200, seed=3, horizon=10.0)
    zero = next(r for r in reports if r.set_id == "ztilde0")
    one = next(r for r in reports if r.set_id == "ztilde1")
    assert zero.fraction == 1.0
    assert zero.co_jump
    assert one.charged_paths == 0


def test_tree_scan_positive_survival_uncharged():
    rng = np.random.default_rng(5)
    tree = T.random_tree(rng, depth=3)
    tau = T.TreeRandomTime.constant(tree, np.inf)
    for rep in evanescence_scan_tree(tree, tau):
        assert rep.charged_paths == 0


def test_tree_scan_detects_charge():
    rng = np.random.default_rng(6)
    tree = T.random_tree(rng, depth=3)
    vals = rng.integers(0, tree.depth, tree.n_paths).astype(float)
    tau = T.TreeRandomTime.from_values(tree, vals)
    zero = next(r for r in evanescence_scan_tree(tree, tau) if r.set_id == "ztilde0")
    assert zero.charged_paths > 0


def test_converse_mechanism():
    rng = np.random.default_rng(7)
    tree = T.random_tree(rng, depth=3)
    vals = rng.integers(0, tree.depth, tree.n_paths).astype(float)
    tau = T.TreeRandomTime.from_values(tree, vals)
    stopped, verdict = converse_mechanism_tree(tree, tau)
    assert verdict.status == "violated"
    assert verdict.residual > 0.0
    # the stopped process is nonzero somewhere (nonconstant)
    assert np.max(np.abs(stopped.values)) > 0.0


def test_converse_mechanism_requires_charge():
    rng = np.random.default_rng(8)
    tree = T.random_tree(rng, depth=3)
    tau = T.TreeRandomTime.constant(tree, np.inf)
    with pytest.raises(ValueError):
        converse_mechanism_tree(tree, tau)


# ---------------------------------------------------------------------------
# positive cases
# ---------------------------------------------------------------------------


def test_positive_case_satisfied_and_reconstructed():
    rng = np.random.default_rng(9)
    tree = T.random_tree(rng, depth=3)
    vals = np.where(rng.random(tree.n_paths) < 0.5, float(tree.depth), np.inf)
    tau = T.TreeRandomTime.from_values(tree, vals)
    M = T.random_f_martingale(rng, tree)
    res = positive_case_verify(tree, tau, M, sc_lambda=0.7)
    assert res.verdict.status == "satisfied"
    assert res.reconstruction_error < 1e-10
    assert res.least_squares_gap < 1e-10
    assert np.isfinite(res.l2_norm)


def test_positive_case_degenerate_time_matches_base():
    rng = np.random.default_rng(10)
    tree = T.random_tree(rng, depth=3)
    tau = T.TreeRandomTime.constant(tree, np.inf)
    M = T.random_f_martingale(rng, tree)
    res = positive_case_verify(tree, tau, M, sc_lambda=-1.3)
    mvar = T.f_bracket_increments(tree, M, M)
    sel = mvar > 0
    assert np.max(np.abs(res.lambda_matrix[sel] - (-1.3))) < 1e-12
    assert res.verdict.status == "satisfied"
