"""Structure-condition verdicts, evanescence diagnostics, positive-case proofs.

A drift/bracket pair satisfies the structure condition when the drift is
absolutely continuous with respect to the bracket with square-integrable
density; the convention here follows the canonical decomposition
``X = X0 + M - lambda . <M, M>``, so the extracted density is minus the
Radon-Nikodym derivative of the drift against the bracket.  Violations are
reported with a witness region carrying drift mass but no bracket mass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tree as treemod
from .calculus import g_drift_bracket_after, g_drift_stopped, interval_difference
from .measures import DriftBracketPair, PathMeasure, Window
from .models import (
    AzemaTriple,
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
from .paths import MarketModel, PiecewiseJumpPath, stochastic_exponential

__all__ = [
    "SCVerdict",
    "EvanescenceReport",
    "check_sc",
    "check_sc_split",
    "check_constant_predictable",
    "evanescence_scan",
    "evanescence_scan_tree",
    "converse_mechanism_tree",
    "positive_case_verify",
    "PositiveCaseResult",
]

DEFAULT_TOL_ANALYTIC = 1e-9
DEFAULT_TOL_MC = 1e-6


@dataclass(frozen=True)
class SCVerdict:
    status: str  # 'satisfied' | 'violated' | 'inconclusive'
    residual: float = 0.0
    lambda_hat: object | None = None
    lambda_hat_samples: tuple[tuple[float, float], ...] = ()
    witness_intervals: tuple[tuple[float, float], ...] = ()
    witness_atoms: tuple[float, ...] = ()
    l2_norm: float = 0.0
    detail: str = ""

    def __post_init__(self):
        if self.status == "satisfied" and (
            self.witness_intervals or self.witness_atoms
        ):
            raise ValueError("satisfied verdicts must not carry a witness")
        if self.status == "violated" and not (
            self.witness_intervals or self.witness_atoms
        ):
            raise ValueError("violated verdicts must carry a witness")

    def to_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "residual": self.residual,
                "lambda_hat_samples": [list(p) for p in self.lambda_hat_samples],
                "witness": {
                    "intervals": [list(p) for p in self.witness_intervals],
                    "atoms": list(self.witness_atoms),
                },
                "l2_norm": self.l2_norm,
                "detail": self.detail,
            },
            sort_keys=True,
        )


def check_sc(pair: DriftBracketPair, tol: float = DEFAULT_TOL_ANALYTIC) -> SCVerdict:
    """Decide absolute continuity of the drift against the bracket.

    Support metadata decides the verdict exactly: drift mass over regions the
    bracket does not charge is the residual, and any such region with mass
    above tolerance is a witness.  On the shared support the density is
    extracted and its squared integral against the bracket reported.
    """
    drift, bracket = pair.drift, pair.bracket
    b_support = bracket.support_intervals()
    b_atoms = set(bracket.atom_times())

    unmatched = interval_difference(drift.support_intervals(), b_support)
    witness_intervals = []
    residual = 0.0
    for lo, hi in unmatched:
        mass = drift.measure(lo - 1e-15, hi, absolute=True)
        if mass > tol:
            witness_intervals.append((lo, hi))
        residual += mass
    witness_atoms = []
    for t, w in drift.atoms:
        if t not in b_atoms:
            residual += abs(w)
            if abs(w) > tol:
                witness_atoms.append(t)

    samples = []
    l2 = 0.0
    matched = interval_difference(drift.support_intervals(), unmatched)
    for lo, hi in matched:
        ts = np.linspace(lo, hi, 7)[1:-1]
        dens = [(float(t), drift.density_at(float(t)), bracket.density_at(float(t))) for t in ts]
        for t, dd, bd in dens:
            if bd > 0.0:
                samples.append((t, -dd / bd))
        # l2 via equal-weight quadrature on the matched region
        w = (hi - lo) / max(len(ts), 1)
        for t, dd, bd in dens:
            if bd > 0.0:
                l2 += (dd / bd) ** 2 * bd * w
    for t, w in drift.atoms:
        if t in b_atoms:
            bw = dict(bracket.atoms)[t]
            if bw != 0.0:
                samples.append((t, -w / bw))
                l2 += (w / bw) ** 2 * bw

    if witness_intervals or witness_atoms:
        return SCVerdict(
            status="violated",
            residual=residual,
            lambda_hat_samples=tuple(samples),
            witness_intervals=tuple(witness_intervals),
            witness_atoms=tuple(witness_atoms),
            l2_norm=l2,
            detail="drift mass outside the bracket support",
        )
    return SCVerdict(
        status="satisfied",
        residual=residual,
        lambda_hat_samples=tuple(samples),
        l2_norm=l2,
    )


def check_sc_split(before: SCVerdict, after: SCVerdict | None) -> SCVerdict:
    """Whole-line verdict from the stopped and after-time parts."""
    if after is None:
        return before
    if before.status == "satisfied" and after.status == "satisfied":
        return SCVerdict(
            status="satisfied",
            residual=before.residual + after.residual,
            l2_norm=before.l2_norm + after.l2_norm,
        )
    status = (
        "violated"
        if "violated" in (before.status, after.status)
        else "inconclusive"
    )
    return SCVerdict(
        status=status,
        residual=before.residual + after.residual,
        witness_intervals=before.witness_intervals + after.witness_intervals,
        witness_atoms=before.witness_atoms + after.witness_atoms,
        l2_norm=before.l2_norm + after.l2_norm,
        detail="; ".join(d for d in (before.detail, after.detail) if d),
    )


def check_constant_predictable(V, tol: float = DEFAULT_TOL_ANALYTIC, grid: int = 512) -> SCVerdict:
    """A predictable finite-variation process satisfies the condition only if constant.

    Accepts a piecewise path (grid-refined total variation plus jumps) or a
    tree process (exact increment sums).
    """
    if isinstance(V, treemod.TreeProcess):
        dv = np.abs(np.diff(V.values, axis=0))
        tv = float(dv.sum(axis=0).max())
        if tv <= tol:
            return SCVerdict(status="satisfied", residual=tv)
        drift_steps = np.abs(V.values - V.values[0]).max(axis=1)
        first_t = int(np.argmax(drift_steps > tol))
        return SCVerdict(
            status="violated",
            residual=tv,
            witness_intervals=((float(first_t), float(V.values.shape[0] - 1)),),
            detail=f"nonconstant predictable process, first departure at step {first_t}",
        )
    path: PiecewiseJumpPath = V
    tv = sum(abs(j) for j in path.jumps)
    bounds = (0.0,) + path.event_times + (path.horizon,)
    first_time = None
    v0 = path.initial_value
    for i in range(len(bounds) - 1):
        a, b = bounds[i], bounds[i + 1]
        if b <= a:
            continue
        ts = np.linspace(a, b, grid)
        vals = np.asarray(path.segments[i](ts))
        tv += float(np.abs(np.diff(vals)).sum())
        over = np.abs(vals - v0) > tol
        if first_time is None and over.any():
            first_time = float(ts[np.argmax(over)])
    if tv <= tol:
        return SCVerdict(status="satisfied", residual=tv)
    return SCVerdict(
        status="violated",
        residual=tv,
        witness_intervals=((first_time if first_time is not None else 0.0, path.horizon),),
        detail="nonconstant predictable finite-variation process",
    )


# ---------------------------------------------------------------------------
# evanescence diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvanescenceReport:
    set_id: str  # 'ztilde0' (survival hits 0 with positive left limit) or 'ztilde1'
    n_paths: int
    charged_paths: int
    example_times: tuple[float, ...]
    co_jump: bool
    extra: dict = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return self.charged_paths / self.n_paths if self.n_paths else 0.0


def _charge_times_weighted(azema: AzemaTriple, tol: float = 1e-12):
    """Times where the left-variant survival vanishes below a positive left limit."""
    zero, one = [], []
    for t, _ in azema.delta_m_atoms:
        zt = azema.z_tilde(t)
        z_minus = azema.z.left_limit(t)
        if zt <= tol and z_minus > tol:
            zero.append(t)
        if zt >= 1.0 - tol and z_minus < 1.0 - tol:
            one.append(t)
    return zero, one


def evanescence_scan(
    model,
    n_paths: int,
    seed: int,
    horizon: float = 10.0,
    psi_table=None,
) -> list[EvanescenceReport]:
    """Count, per simulated path, charges of the two thin sets.

    The weighted model charges the vanishing set at the second event on every
    path on which it is resolved; the last-passage model charges the
    saturation set at events whose pre-jump level lies in the unit band above
    the threshold.  Both charge times are market jump times, so the co-jump
    flag is reported verbatim.
    """
    zero_charged = one_charged = resolved = 0
    zero_times: list[float] = []
    one_times: list[float] = []
    if isinstance(model, WeightedJumpTimeModel):
        for i in range(n_paths):
            path = simulate_weighted_path(model, horizon, seed, i)
            az = azema_weighted(path, model)
            zero, one = _charge_times_weighted(az)
            resolved += 1
            if zero:
                zero_charged += 1
                if len(zero_times) < 5:
                    zero_times.extend(zero[:1])
            if one:
                one_charged += 1
                if len(one_times) < 5:
                    one_times.extend(one[:1])
        denom = n_paths
    elif isinstance(model, LastPassageModel):
        table = psi_table if psi_table is not None else build_ruin_function(model, n_paths=200_000, seed=seed + 1)
        for i in range(n_paths):
            path = simulate_certified_path(model, seed, i)
            az = azema_last_passage(path, model, table)
            zero, one = _charge_times_weighted(az)
            resolved += 1
            if zero:
                zero_charged += 1
                if len(zero_times) < 5:
                    zero_times.extend(zero[:1])
            if one:
                one_charged += 1
                if len(one_times) < 5:
                    one_times.extend(one[:1])
        denom = n_paths
    else:
        raise TypeError(f"unsupported model {type(model)!r}")
    return [
        EvanescenceReport(
            "ztilde0", denom, zero_charged, tuple(zero_times), co_jump=bool(zero_charged),
            extra={"resolved_paths": resolved},
        ),
        EvanescenceReport(
            "ztilde1", denom, one_charged, tuple(one_times), co_jump=bool(one_charged),
            extra={"resolved_paths": resolved},
        ),
    ]


def evanescence_scan_tree(
    tree: treemod.ProbTree, tau: treemod.TreeRandomTime, tol: float = 1e-12
) -> list[EvanescenceReport]:
    """Exact thin-set charges on a tree, probability-weighted."""
    Z, Zt, _, _ = treemod.project_optional(tree, tau)
    zero_mask = np.zeros(tree.n_paths, dtype=bool)
    one_mask = np.zeros(tree.n_paths, dtype=bool)
    zero_times, one_times = [], []
    prev = np.ones(tree.n_paths)
    for t in range(tree.depth + 1):
        zero_here = (Zt.values[t] <= tol) & (prev > tol)
        one_here = (Zt.values[t] >= 1.0 - tol) & (prev < 1.0 - tol)
        if zero_here.any():
            zero_times.append(float(t))
        if one_here.any():
            one_times.append(float(t))
        zero_mask |= zero_here
        one_mask |= one_here
        prev = Z.values[t]
    w = tree.path_probs
    return [
        EvanescenceReport(
            "ztilde0",
            tree.n_paths,
            int(zero_mask.sum()),
            tuple(zero_times[:5]),
            co_jump=False,
            extra={"probability_mass": float(w[zero_mask].sum())},
        ),
        EvanescenceReport(
            "ztilde1",
            tree.n_paths,
            int(one_mask.sum()),
            tuple(one_times[:5]),
            co_jump=False,
            extra={"probability_mass": float(w[one_mask].sum())},
        ),
    ]


def converse_mechanism_tree(
    tree: treemod.ProbTree, tau: treemod.TreeRandomTime
) -> tuple[treemod.TreeProcess, SCVerdict]:
    """Constructive converse: a charged vanishing set breaks the condition.

    Picks a stopping time T carried by {Z~ = 0 < Z_-}, forms the martingale
    ``1_{[T, .)} - compensator`` and stops it at tau: the result equals minus
    the stopped compensator, a predictable nonconstant finite-variation
    process, which the constancy check must reject.
    """
    Z, Zt, _, _ = treemod.project_optional(tree, tau)
    n, P = tree.depth, tree.n_paths
    prev = np.ones(P)
    T = np.full(P, np.inf)
    for t in range(n + 1):
        hit = (Zt.values[t] == 0.0) & (prev > 0.0) & ~np.isfinite(T)
        # stopping time: hits must be node-level events, which they are since
        # Z-tilde and the previous Z are node functions
        T[hit] = float(t)
        prev = Z.values[t]
    if not np.isfinite(T).any():
        raise ValueError("the vanishing thin set is not charged on this tree")
    V = np.zeros((n + 1, P))
    for t in range(n + 1):
        V[t] = (T <= t).astype(float)
    Vproc = treemod.TreeProcess(V, "F")
    comp = treemod.compensator(tree, Vproc, "F")
    M = treemod.TreeProcess(V - comp.values, "F")
    # stop at tau
    stopped = np.zeros_like(M.values)
    for t in range(n + 1):
        tcap = np.minimum(np.full(P, float(t)), tau.values).astype(int)
        stopped[t] = M.values[tcap, np.arange(P)]
    M_stopped = treemod.TreeProcess(stopped, "G")
    # mechanism: V never starts before tau does (the time lives on Z~ = 0)
    comp_stopped = np.zeros_like(comp.values)
    for t in range(n + 1):
        tcap = np.minimum(np.full(P, float(t)), tau.values).astype(int)
        comp_stopped[t] = comp.values[tcap, np.arange(P)]
    if np.max(np.abs(stopped + comp_stopped)) > 1e-12:
        raise AssertionError("stopped martingale is not minus the stopped compensator")
    verdict = check_constant_predictable(
        treemod.TreeProcess(-comp_stopped, "G", predictable=True)
    )
    return M_stopped, verdict


# ---------------------------------------------------------------------------
# positive cases on trees
# ---------------------------------------------------------------------------


@dataclass
class PositiveCaseResult:
    verdict: SCVerdict
    lambda_matrix: np.ndarray  # per (t, path), the extracted density
    reconstruction_error: float
    least_squares_gap: float
    l2_norm: float


def positive_case_verify(
    tree: treemod.ProbTree,
    tau: treemod.TreeRandomTime,
    M: treemod.TreeProcess,
    sc_lambda: float | np.ndarray = 0.0,
    side: str = "before",
    tol: float = 1e-10,
) -> PositiveCaseResult:
    """Extract the enlarged-market density and certify the reconstruction.

    The market is ``S = S0 + M - sc_lambda . <M>``; on the live region its
    stopped drift is ``(1/Z_-) d<M,m> - sc_lambda d<M>`` and must equal minus
    the extracted density times the enlarged bracket, cell by cell.  The gap
    to a global least-squares extraction is also reported (the enumeration
    oracle), and drift carried by zero-bracket cells yields a violation.
    """
    if side not in ("before", "after"):
        raise ValueError("side must be 'before' or 'after'")
    Z, Zt, m, _ = treemod.project_optional(tree, tau)
    hat_M = treemod.jeulin_hat(tree, tau, M, side)
    mm = treemod.f_bracket_increments(tree, M, m)
    mvar = treemod.f_bracket_increments(tree, M, M)
    hatvar = treemod.g_bracket_increments(tree, tau, hat_M, hat_M)
    lam_sc = np.broadcast_to(np.asarray(sc_lambda, dtype=float), mm.shape)
    live_side = side == "before"

    def cell_drift(t: int, anchor: int) -> float:
        zp = Z.values[t - 1][anchor]
        if live_side:
            return mm[t, anchor] / zp - lam_sc[t, anchor] * mvar[t, anchor]
        return -mm[t, anchor] / (1.0 - zp) - lam_sc[t, anchor] * mvar[t, anchor]

    n, P = tree.depth, tree.n_paths
    lam_hat = np.zeros((n + 1, P))
    recon_err = 0.0
    residual = 0.0
    witness = []
    l2 = 0.0
    for t in range(1, n + 1):
        for key, idx in tau.g_cells(t - 1).items():
            if (key[1] == ("a",)) != live_side:
                continue
            anchor = idx[0]
            drift = cell_drift(t, anchor)
            br = hatvar[t, anchor]
            pc = tree.path_probs[idx].sum()
            if br > 0.0:
                lam_hat[t, idx] = -drift / br
                recon_err = max(recon_err, abs(drift + lam_hat[t, anchor] * br))
                l2 += pc * lam_hat[t, anchor] ** 2 * br
            else:
                residual += pc * abs(drift)
                if abs(drift) > tol:
                    witness.append((float(t - 1), float(t)))
    # gap to the enumeration least-squares oracle: minimize the weighted
    # squared reconstruction error over predictable densities, cell by cell
    ls_gap = 0.0
    for t in range(1, n + 1):
        for key, idx in tau.g_cells(t - 1).items():
            if (key[1] == ("a",)) != live_side:
                continue
            anchor = idx[0]
            br = hatvar[t, anchor]
            if br > 0.0:
                drift = cell_drift(t, anchor)
                ls = -drift * br / (br * br)
                ls_gap = max(ls_gap, abs(ls - lam_hat[t, anchor]))
    if residual > tol or witness:
        verdict = SCVerdict(
            status="violated" if witness else "inconclusive",
            residual=residual,
            witness_intervals=tuple(witness),
            l2_norm=l2,
            detail="drift on zero-bracket cells",
        )
    else:
        verdict = SCVerdict(status="satisfied", residual=residual, l2_norm=l2)
    return PositiveCaseResult(
        verdict=verdict,
        lambda_matrix=lam_hat,
        reconstruction_error=recon_err,
        least_squares_gap=ls_gap,
        l2_norm=l2,
    )
