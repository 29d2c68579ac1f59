"""Exact verification of enlargement identities on finite probability trees.

Discrete time stands in for continuous: predictable means measurable one step
earlier and the left limit is the previous value.  Under this embedding every
projection, compensator and optional-integral identity is finite algebra, so
each verifier below returns a max discrepancy that must sit at rounding level
(the assertion budget is 1e-12).

A tree with positive transition probabilities is stored parent-wise; full
paths coincide with terminal nodes, so enumeration is exact.  The enlarged
filtration refines each node by the observed value of the random time (or by
"still alive"), which is precisely the information structure of progressive
enlargement with no right-limit intersection needed in discrete time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FiltrationError",
    "SingularityError",
    "ProbTree",
    "load_tree_spec",
    "TreeRandomTime",
    "TreeProcess",
    "project_optional",
    "verify_ztilde_identity",
    "compensator",
    "is_martingale",
    "max_martingale_defect",
    "verify_g_compensator_stopped",
    "verify_predictable_projection_identities",
    "jeulin_hat",
    "optional_integral",
    "verify_oi_defining_property",
    "verify_oi_covariation",
    "truncation_densities",
    "verify_phi_hat_identity",
    "random_f_martingale",
    "random_adapted_process",
    "random_optional_process",
    "random_tree",
    "random_time",
    "random_honest_time",
    "f_bracket_increments",
    "g_bracket_increments",
    "coarsen_last_level",
]

PATH_CAP = 4096


class FiltrationError(ValueError):
    """Process measurability does not match the requested filtration."""


class SingularityError(RuntimeError):
    """A positive-probability cell divides by a vanishing survival value."""


# ---------------------------------------------------------------------------
# tree, random time, process containers
# ---------------------------------------------------------------------------


class ProbTree:
    """Finite tree: level 0 is a single root; full paths are the leaves."""

    def __init__(self, parents: list[np.ndarray], probs: list[np.ndarray]):
        if len(parents) != len(probs):
            raise ValueError("parents and probs must align per level")
        self.depth = len(parents)
        self.parents = [np.asarray(p, dtype=np.int64) for p in parents]
        self.probs = [np.asarray(q, dtype=float) for q in probs]
        sizes = [1] + [len(p) for p in self.parents]
        self.nodes_per_level = sizes
        for t, (par, pr) in enumerate(zip(self.parents, self.probs)):
            if len(par) != len(pr):
                raise ValueError(f"level {t}: parent/prob length mismatch")
            if np.any(pr <= 0.0):
                raise ValueError(f"level {t}: transition probabilities must be > 0")
            if par.min(initial=0) < 0 or (len(par) and par.max() >= sizes[t]):
                raise ValueError(f"level {t}: parent index out of range")
            sums = np.zeros(sizes[t])
            np.add.at(sums, par, pr)
            if np.any(np.abs(sums - 1.0) > 1e-12):
                raise ValueError(f"level {t}: transition probabilities must sum to 1")
            if np.any(sums == 0.0):
                raise ValueError(f"level {t}: childless interior node")
        n_paths = sizes[-1]
        if n_paths > PATH_CAP:
            raise ValueError(f"{n_paths} paths exceed the cap {PATH_CAP}")
        self.n_paths = n_paths
        nodes = np.zeros((n_paths, self.depth + 1), dtype=np.int64)
        nodes[:, self.depth] = np.arange(n_paths)
        for t in range(self.depth - 1, -1, -1):
            nodes[:, t] = self.parents[t][nodes[:, t + 1]]
        self.path_nodes = nodes
        w = np.ones(n_paths)
        for t in range(self.depth):
            w *= self.probs[t][nodes[:, t + 1]]
        self.path_probs = w
        self._f_cells = [
            _partition(self.path_nodes[:, t]) for t in range(self.depth + 1)
        ]

    def f_cells(self, t: int) -> dict:
        """F_t atoms: path-index arrays keyed by node index."""
        return self._f_cells[t]

    def to_json(self) -> str:
        return json.dumps(
            {
                "depth": self.depth,
                "transitions": [
                    [{"parent": int(a), "prob": float(b)} for a, b in zip(par, pr)]
                    for par, pr in zip(self.parents, self.probs)
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, payload: str) -> "ProbTree":
        data = json.loads(payload)
        parents, probs = [], []
        for level in data["transitions"]:
            parents.append(np.array([e["parent"] for e in level], dtype=np.int64))
            probs.append(np.array([e["prob"] for e in level]))
        tree = cls(parents, probs)
        if data.get("depth") is not None and data["depth"] != tree.depth:
            raise ValueError("declared depth does not match the transitions")
        return tree


def load_tree_spec(payload: str):
    """Load {depth, transitions, tau_rule}; returns (tree, random time or None).

    tau_rule forms: {"type": "values", "values": [...]} with per-path values
    ("inf" allowed), {"type": "last_visit", "nodes": [[t, idx], ...]} or
    {"type": "constant", "value": v}.
    """
    tree = ProbTree.from_json(payload)
    rule = json.loads(payload).get("tau_rule")
    if rule is None:
        return tree, None
    kind = rule["type"]
    if kind == "values":
        vals = [np.inf if v in ("inf", None) else float(v) for v in rule["values"]]
        return tree, TreeRandomTime.from_values(tree, vals)
    if kind == "last_visit":
        return tree, TreeRandomTime.last_visit(tree, rule["nodes"])
    if kind == "constant":
        v = rule["value"]
        return tree, TreeRandomTime.constant(tree, np.inf if v == "inf" else float(v))
    raise ValueError(f"unknown tau_rule type {kind!r}")


class TreeRandomTime:
    """Path-measurable random time with values in {0, ..., n, inf}."""

    def __init__(
        self,
        tree: ProbTree,
        values: np.ndarray,
        honest_flag: bool = False,
        node_set: frozenset | None = None,
    ):
        values = np.asarray(values, dtype=float)
        if values.shape != (tree.n_paths,):
            raise ValueError("one tau value per path required")
        finite = values[np.isfinite(values)]
        if finite.size and (
            np.any(finite < 0)
            or np.any(finite > tree.depth)
            or np.any(finite != np.round(finite))
        ):
            raise ValueError("tau values must be integers in [0, depth] or inf")
        self.tree = tree
        self.values = values
        self.node_set = node_set
        if honest_flag:
            if node_set is None:
                raise ValueError("honest times must declare their node set")
            expected = _last_visit_values(tree, node_set)
            if not np.array_equal(
                np.nan_to_num(expected, posinf=-1.0),
                np.nan_to_num(values, posinf=-1.0),
            ):
                raise ValueError("declared honest time is not the last visit time")
        self.honest_flag = bool(honest_flag)
        self._g_cells: dict[int, dict] = {}

    @classmethod
    def from_values(cls, tree: ProbTree, values) -> "TreeRandomTime":
        return cls(tree, np.asarray(values, dtype=float))

    @classmethod
    def constant(cls, tree: ProbTree, value: float) -> "TreeRandomTime":
        return cls(tree, np.full(tree.n_paths, float(value)))

    @classmethod
    def last_visit(cls, tree: ProbTree, node_set) -> "TreeRandomTime":
        ns = frozenset((int(a), int(b)) for a, b in node_set)
        return cls(tree, _last_visit_values(tree, ns), honest_flag=True, node_set=ns)

    def is_honest(self) -> bool:
        """tau restricted to {tau < t} must be constant on every F_t atom."""
        for t in range(1, self.tree.depth + 1):
            for idx in self.tree.f_cells(t).values():
                past = self.values[idx][self.values[idx] < t]
                if np.unique(past).size > 1:
                    return False
        return True

    def alive(self, t: int) -> np.ndarray:
        """Paths with tau >= t (the time-t increment happens at or before tau)."""
        return self.values >= t

    def g_cells(self, t: int) -> dict:
        """G_t atoms: node index plus either the tau value or 'alive'."""
        if t not in self._g_cells:
            keys = []
            for p in range(self.tree.n_paths):
                v = self.values[p]
                state = ("d", v) if v <= t else ("a",)
                keys.append((int(self.tree.path_nodes[p, t]), state))
            self._g_cells[t] = _partition_keys(keys)
        return self._g_cells[t]


@dataclass(frozen=True)
class TreeProcess:
    """Values per (time, path), constant on the atoms of its filtration."""

    values: np.ndarray  # shape (depth + 1, n_paths)
    filtration: str = "F"  # 'F' or 'G'
    predictable: bool = False

    def delta(self, t: int) -> np.ndarray:
        return self.values[t] - self.values[t - 1]


def _partition(labels: np.ndarray) -> dict:
    out: dict = {}
    for p, lab in enumerate(labels):
        out.setdefault(int(lab), []).append(p)
    return {k: np.asarray(v, dtype=np.int64) for k, v in out.items()}


def _partition_keys(keys: list) -> dict:
    out: dict = {}
    for p, k in enumerate(keys):
        out.setdefault(k, []).append(p)
    return {k: np.asarray(v, dtype=np.int64) for k, v in out.items()}


def _last_visit_values(tree: ProbTree, node_set: frozenset) -> np.ndarray:
    vals = np.full(tree.n_paths, np.inf)
    for p in range(tree.n_paths):
        visits = [
            t
            for t in range(tree.depth + 1)
            if (t, int(tree.path_nodes[p, t])) in node_set
        ]
        if visits:
            vals[p] = float(visits[-1])
    return vals


def _cells_for(tree: ProbTree, tau: TreeRandomTime | None, filtration: str, t: int):
    if filtration == "F":
        return tree.f_cells(t)
    if filtration == "G":
        if tau is None:
            raise FiltrationError("G-filtration operations need the random time")
        return tau.g_cells(t)
    raise FiltrationError(f"unknown filtration {filtration!r}")


def _cond_mean(tree: ProbTree, cells: dict, x: np.ndarray) -> np.ndarray:
    """Per-path broadcast of E[x | cell].

    Numerator and denominator use the same summation pipeline so that
    indicator averages come out exactly 0.0 or 1.0; the thin-set diagnostics
    compare against those values exactly.
    """
    out = np.empty_like(x)
    w = tree.path_probs
    for idx in cells.values():
        wi = w[idx]
        out[idx] = float(np.sum(wi * x[idx]) / np.sum(wi))
    return out


def _cell_mean(w: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum(w * x) / np.sum(w))


def check_adapted(tree: ProbTree, proc: TreeProcess, tau: TreeRandomTime | None = None):
    for t in range(tree.depth + 1):
        cells = _cells_for(tree, tau, proc.filtration, t)
        for idx in cells.values():
            vals = proc.values[t, idx]
            if np.ptp(vals) > 1e-12 * max(1.0, np.max(np.abs(vals))):
                raise FiltrationError(
                    f"process not {proc.filtration}-adapted at t={t}"
                )


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def project_optional(tree: ProbTree, tau: TreeRandomTime):
    """Survival processes of tau: (Z, Z~, m, D^o) as F-adapted matrices.

    Z_t = P(tau > t | F_t), the tilde variant uses >=, the dual optional
    projection accumulates P(tau = s | F_s), and m = Z + D^o is the exact
    F-martingale closing the system.
    """
    n, P = tree.depth, tree.n_paths
    Z = np.zeros((n + 1, P))
    Zt = np.zeros((n + 1, P))
    Dinc = np.zeros((n + 1, P))
    v = tau.values
    for t in range(n + 1):
        cells = tree.f_cells(t)
        Z[t] = _cond_mean(tree, cells, (v > t).astype(float))
        Zt[t] = _cond_mean(tree, cells, (v >= t).astype(float))
        Dinc[t] = _cond_mean(tree, cells, (v == t).astype(float))
    D = np.cumsum(Dinc, axis=0)
    m = Z + D
    return (
        TreeProcess(Z, "F"),
        TreeProcess(Zt, "F"),
        TreeProcess(m, "F"),
        TreeProcess(D, "F"),
    )


def verify_ztilde_identity(tree: ProbTree, tau: TreeRandomTime) -> float:
    """Max over (t, path) of |Z~_t - (Z_{t-1} + dm_t)| (t=0 uses Z_- = 1)."""
    Z, Zt, m, _ = project_optional(tree, tau)
    err = 0.0
    prev_z = np.ones(tree.n_paths)
    prev_m = np.ones(tree.n_paths)
    for t in range(tree.depth + 1):
        dm = m.values[t] - prev_m
        err = max(err, float(np.max(np.abs(Zt.values[t] - (prev_z + dm)))))
        prev_z = Z.values[t]
        prev_m = m.values[t]
    return err


def compensator(
    tree: ProbTree,
    proc: TreeProcess,
    filtration: str,
    tau: TreeRandomTime | None = None,
) -> TreeProcess:
    """Predictable finite-variation part: increments E[dV | cell one step back]."""
    if proc.filtration == "G" and filtration == "F":
        raise FiltrationError("cannot take an F-compensator of a G-process")
    n, P = tree.depth, tree.n_paths
    out = np.zeros((n + 1, P))
    for t in range(1, n + 1):
        cells = _cells_for(tree, tau, filtration, t - 1)
        out[t] = out[t - 1] + _cond_mean(tree, cells, proc.delta(t))
    return TreeProcess(out, filtration, predictable=True)


def max_martingale_defect(
    tree: ProbTree,
    proc: TreeProcess,
    filtration: str,
    tau: TreeRandomTime | None = None,
) -> float:
    worst = 0.0
    for t in range(1, tree.depth + 1):
        cells = _cells_for(tree, tau, filtration, t - 1)
        cond = _cond_mean(tree, cells, proc.delta(t))
        worst = max(worst, float(np.max(np.abs(cond))))
    return worst


def is_martingale(
    tree: ProbTree,
    proc: TreeProcess,
    filtration: str,
    tau: TreeRandomTime | None = None,
    tol: float = 1e-12,
) -> bool:
    return max_martingale_defect(tree, proc, filtration, tau) < tol


# ---------------------------------------------------------------------------
# compensator and projection identities
# ---------------------------------------------------------------------------


def verify_g_compensator_stopped(
    tree: ProbTree, tau: TreeRandomTime, V: TreeProcess
) -> float:
    """Stopped-process compensator identity.

    On each live cell the enlarged compensator increment of the stopped
    process must equal the node-level expectation of (Z~ dV) scaled by the
    previous survival value; off the live region both sides vanish.
    """
    if V.filtration != "F":
        raise FiltrationError("V must be F-adapted")
    Z, Zt, _, _ = project_optional(tree, tau)
    err = 0.0
    for t in range(1, tree.depth + 1):
        dv = V.delta(t)
        rhs_node = _cond_mean(tree, tree.f_cells(t - 1), Zt.values[t] * dv)
        z_prev = Z.values[t - 1]
        alive = tau.alive(t)
        for key, idx in tau.g_cells(t - 1).items():
            live_cell = key[1] == ("a",)
            wi = tree.path_probs[idx]
            if live_cell:
                lhs = _cell_mean(wi, dv[idx])
                zp = z_prev[idx[0]]
                if zp <= 0.0:
                    raise SingularityError(
                        f"live cell at t={t} with vanishing previous survival"
                    )
                rhs = rhs_node[idx[0]] / zp
            else:
                stopped_dv = dv[idx] * alive[idx]
                lhs = _cell_mean(wi, stopped_dv)
                rhs = 0.0
            err = max(err, abs(lhs - rhs))
    return err


def verify_predictable_projection_identities(
    tree: ProbTree,
    tau: TreeRandomTime,
    M: TreeProcess,
    side: str = "before",
    V: TreeProcess | None = None,
) -> float:
    """Predictable-projection transfer between the base and enlarged filtrations.

    before (live cells):   p_G(dM / Z~)        = p_F(dM 1_{Z~>0}) / Z_-
                           p_G(1 / Z~)         = p_F(1_{Z~>0}) / Z_-
    after  (dead cells):   p_G(dV)             = p_F((1 - Z~) dV) / (1 - Z_-)
                           p_G(dM / (1 - Z~))  = p_F(dM 1_{Z~<1}) / (1 - Z_-)
    The after identities require an honest time.
    """
    if side == "after" and not tau.honest_flag:
        raise FiltrationError("after-time identities require an honest time")
    Z, Zt, _, _ = project_optional(tree, tau)
    err = 0.0
    for t in range(1, tree.depth + 1):
        dm = M.delta(t)
        zt = Zt.values[t]
        z_prev = Z.values[t - 1]
        f_prev = tree.f_cells(t - 1)
        if side == "before":
            rhs1 = _cond_mean(tree, f_prev, dm * (zt > 0.0))
            rhs2 = _cond_mean(tree, f_prev, (zt > 0.0).astype(float))
        else:
            dv = V.delta(t) if V is not None else dm
            rhs_v = _cond_mean(tree, f_prev, (1.0 - zt) * dv)
            rhs1 = _cond_mean(tree, f_prev, dm * (zt < 1.0))
            rhs2 = _cond_mean(tree, f_prev, (zt < 1.0).astype(float))
        for key, idx in tau.g_cells(t - 1).items():
            live_cell = key[1] == ("a",)
            wi = tree.path_probs[idx]
            anchor = idx[0]
            if side == "before" and live_cell:
                zp = z_prev[anchor]
                lhs1 = _cell_mean(wi, dm[idx] / zt[idx])
                lhs2 = _cell_mean(wi, 1.0 / zt[idx])
                err = max(err, abs(lhs1 - rhs1[anchor] / zp))
                err = max(err, abs(lhs2 - rhs2[anchor] / zp))
            elif side == "after" and not live_cell:
                zp = z_prev[anchor]
                dv = V.delta(t) if V is not None else dm
                lhs_v = _cell_mean(wi, dv[idx])
                lhs1 = _cell_mean(wi, dm[idx] / (1.0 - zt[idx]))
                lhs2 = _cell_mean(wi, 1.0 / (1.0 - zt[idx]))
                err = max(err, abs(lhs_v - rhs_v[anchor] / (1.0 - zp)))
                err = max(err, abs(lhs1 - rhs1[anchor] / (1.0 - zp)))
                err = max(err, abs(lhs2 - rhs2[anchor] / (1.0 - zp)))
    return err


# ---------------------------------------------------------------------------
# enlargement decompositions
# ---------------------------------------------------------------------------


def f_bracket_increments(
    tree: ProbTree, A: TreeProcess, B: TreeProcess
) -> np.ndarray:
    """Matrix of ⟨A, B⟩ increments per (t, path), F-predictable."""
    n, P = tree.depth, tree.n_paths
    out = np.zeros((n + 1, P))
    for t in range(1, n + 1):
        out[t] = _cond_mean(tree, tree.f_cells(t - 1), A.delta(t) * B.delta(t))
    return out


def g_bracket_increments(
    tree: ProbTree, tau: TreeRandomTime, A: TreeProcess, B: TreeProcess
) -> np.ndarray:
    n, P = tree.depth, tree.n_paths
    out = np.zeros((n + 1, P))
    for t in range(1, n + 1):
        out[t] = _cond_mean(tree, tau.g_cells(t - 1), A.delta(t) * B.delta(t))
    return out


def jeulin_hat(
    tree: ProbTree, tau: TreeRandomTime, M: TreeProcess, side: str
) -> TreeProcess:
    """Enlarged-filtration martingale part of M stopped at tau (or restarted after).

    before:  dM^ = 1_{t<=tau} (dM - d<M,m>/Z_-)
    after:   dM^ = 1_{t>tau}  (dM + d<M,m>/(1-Z_-))
    The output is certified exactly: every cell's conditional increment is zero.
    """
    if M.filtration != "F":
        raise FiltrationError("M must be an F-martingale")
    if side not in ("before", "after"):
        raise ValueError("side must be 'before' or 'after'")
    if side == "after" and not tau.honest_flag:
        raise FiltrationError("the after-tau decomposition requires an honest time")
    Z, _, m, _ = project_optional(tree, tau)
    if side == "after":
        _check_z_tau_below_one(tree, tau, Z)
    mm = f_bracket_increments(tree, M, m)
    n, P = tree.depth, tree.n_paths
    out = np.zeros((n + 1, P))
    for t in range(1, n + 1):
        z_prev = Z.values[t - 1]
        if side == "before":
            on = tau.alive(t)
            denom = z_prev
            if np.any(on & (denom <= 0.0)):
                raise SingularityError(f"Z_- = 0 on a live path at t={t}")
            inc = np.where(on, M.delta(t) - mm[t] / np.where(on, denom, 1.0), 0.0)
        else:
            on = ~tau.alive(t)
            denom = 1.0 - z_prev
            if np.any(on & (denom <= 0.0)):
                raise SingularityError(f"Z_- = 1 on a dead path at t={t}")
            inc = np.where(on, M.delta(t) + mm[t] / np.where(on, denom, 1.0), 0.0)
        out[t] = out[t - 1] + inc
    return TreeProcess(out, "G")


def _check_z_tau_below_one(tree: ProbTree, tau: TreeRandomTime, Z: TreeProcess):
    v = tau.values
    for p in range(tree.n_paths):
        if np.isfinite(v[p]):
            t = int(v[p])
            if Z.values[t, p] >= 1.0:
                raise SingularityError(
                    f"survival equals 1 at the random time on path {p}"
                )


def optional_integral(
    tree: ProbTree,
    H: TreeProcess,
    N: TreeProcess,
    filtration: str,
    tau: TreeRandomTime | None = None,
) -> TreeProcess:
    """Compensated integral: dM = H dN - p(H dN); a martingale by construction."""
    n, P = tree.depth, tree.n_paths
    out = np.zeros((n + 1, P))
    for t in range(1, n + 1):
        cells = _cells_for(tree, tau, filtration, t - 1)
        hdn = H.values[t] * N.delta(t)
        out[t] = out[t - 1] + hdn - _cond_mean(tree, cells, hdn)
    return TreeProcess(out, filtration)


def _martingale_increment_basis(
    tree: ProbTree, filtration: str, tau: TreeRandomTime | None
):
    """Spanning family of single-step martingales (as value matrices)."""
    n, P = tree.depth, tree.n_paths
    basis = []
    for t in range(1, n + 1):
        cells = _cells_for(tree, tau, filtration, t)
        prev_cells = _cells_for(tree, tau, filtration, t - 1)
        for idx_prev in prev_cells.values():
            members = set(idx_prev.tolist())
            sub = [
                idx for idx in cells.values() if set(idx.tolist()) <= members
            ]
            if len(sub) <= 1:
                continue
            w_prev = tree.path_probs[idx_prev].sum()
            for s in sub:
                vals = np.zeros((n + 1, P))
                p_s = tree.path_probs[s].sum() / w_prev
                inc = np.zeros(P)
                inc[idx_prev] = -p_s
                inc[s] += 1.0
                vals[t:] = inc
                basis.append(TreeProcess(vals, filtration))
    return basis


def verify_oi_defining_property(
    tree: ProbTree,
    H: TreeProcess,
    N: TreeProcess,
    filtration: str,
    tau: TreeRandomTime | None = None,
) -> float:
    """E[(H o N)_n Y_n] must equal E[sum H d[N, Y]] for every test martingale Y."""
    M = optional_integral(tree, H, N, filtration, tau)
    w = tree.path_probs
    err = 0.0
    for Y in _martingale_increment_basis(tree, filtration, tau):
        lhs = float(np.dot(w, M.values[-1] * Y.values[-1]))
        acc = np.zeros(tree.n_paths)
        for t in range(1, tree.depth + 1):
            acc += H.values[t] * N.delta(t) * Y.delta(t)
        rhs = float(np.dot(w, acc))
        err = max(err, abs(lhs - rhs))
    return err


def verify_oi_covariation(
    tree: ProbTree,
    H: TreeProcess,
    N: TreeProcess,
    K: TreeProcess,
    M: TreeProcess,
    filtration: str,
    tau: TreeRandomTime | None = None,
) -> float:
    """Bracket of two compensated integrals versus its closed form.

    <H o N, K o M> = (HK . [N, M])^p - sum p(H dN) p(K dM), cell by cell.
    """
    A = optional_integral(tree, H, N, filtration, tau)
    B = optional_integral(tree, K, M, filtration, tau)
    err = 0.0
    for t in range(1, tree.depth + 1):
        cells = _cells_for(tree, tau, filtration, t - 1)
        dA, dB = A.delta(t), B.delta(t)
        hdn = H.values[t] * N.delta(t)
        kdm = K.values[t] * M.delta(t)
        for idx in cells.values():
            wi = tree.path_probs[idx]
            lhs = _cell_mean(wi, dA[idx] * dB[idx])
            quad = _cell_mean(wi, hdn[idx] * kdm[idx])
            p1 = _cell_mean(wi, hdn[idx])
            p2 = _cell_mean(wi, kdm[idx])
            err = max(err, abs(lhs - (quad - p1 * p2)))
    return err


# ---------------------------------------------------------------------------
# truncated integrands, their stable limits and the drift identity
# ---------------------------------------------------------------------------


@dataclass
class TruncationResult:
    side: str
    stabilization_n: int
    phi: np.ndarray  # stabilized density per (t, path), constant on G cells
    phi_by_n: dict[int, np.ndarray]
    beta_m: np.ndarray  # base-filtration GKW density of m on M
    max_orthogonality_defect: float
    hat_m: TreeProcess
    hat_M: TreeProcess


def _gkw_density(
    tree: ProbTree,
    tau: TreeRandomTime | None,
    filtration: str,
    A: TreeProcess,
    B: TreeProcess,
) -> tuple[np.ndarray, float]:
    """Per-cell least squares of dA on dB; returns density and the worst
    residual correlation |<A - phi.B, B>| over cells."""
    n, P = tree.depth, tree.n_paths
    phi = np.zeros((n + 1, P))
    worst = 0.0
    for t in range(1, n + 1):
        cells = _cells_for(tree, tau, filtration, t - 1)
        dA, dB = A.delta(t), B.delta(t)
        for idx in cells.values():
            wi = tree.path_probs[idx]
            num = _cell_mean(wi, dA[idx] * dB[idx])
            den = _cell_mean(wi, dB[idx] ** 2)
            coef = num / den if den > 0.0 else 0.0
            phi[t, idx] = coef
            resid = _cell_mean(wi, (dA[idx] - coef * dB[idx]) * dB[idx])
            worst = max(worst, abs(resid))
    return phi, worst


def truncation_densities(
    tree: ProbTree, tau: TreeRandomTime, M: TreeProcess, side: str
) -> TruncationResult:
    """GKW densities of the truncated reciprocal-survival integrals.

    The integrand is 1/Z~ cut below 1/n on the live region (before) or
    1/(1-Z~) cut where 1-Z~ < 1/n on the dead region (after), composed with
    the enlarged martingale part of m and regressed on that of M.  On a
    finite tree the survival process takes finitely many values, so the
    density stabilizes at a computable index; past it the density is the
    limit object entering the drift identity.
    """
    if side not in ("before", "after"):
        raise ValueError("side must be 'before' or 'after'")
    Z, Zt, m, _ = project_optional(tree, tau)
    hat_m = jeulin_hat(tree, tau, m, side)
    hat_M = jeulin_hat(tree, tau, M, side)
    n, P = tree.depth, tree.n_paths

    region = np.zeros((n + 1, P), dtype=bool)
    for t in range(1, n + 1):
        region[t] = tau.alive(t) if side == "before" else ~tau.alive(t)
    base = Zt.values if side == "before" else (1.0 - Zt.values)
    charged = base[region]
    pos = charged[charged > 0.0]
    n_star = 1 if pos.size == 0 else int(math.ceil(1.0 / pos.min() - 1e-9))

    def integrand(ncut: int) -> TreeProcess:
        vals = np.zeros((n + 1, P))
        mask = region & (base >= 1.0 / ncut)
        vals[mask] = 1.0 / base[mask]
        return TreeProcess(vals, "G")

    phi_by_n: dict[int, np.ndarray] = {}
    worst_orth = 0.0
    ladder = sorted(set([1, 2] + [max(1, n_star // 2), n_star, n_star + 1]))
    for ncut in ladder:
        oi = optional_integral(tree, integrand(ncut), hat_m, "G", tau)
        phi, orth = _gkw_density(tree, tau, "G", oi, hat_M)
        phi_by_n[ncut] = phi
        worst_orth = max(worst_orth, orth)
    if np.max(np.abs(phi_by_n[n_star] - phi_by_n[n_star + 1])) > 1e-12:
        raise RuntimeError("truncation density failed to stabilize at n*")

    beta_m, orth_f = _gkw_density(tree, None, "F", m, M)
    worst_orth = max(worst_orth, orth_f)
    return TruncationResult(
        side=side,
        stabilization_n=n_star,
        phi=phi_by_n[n_star],
        phi_by_n=phi_by_n,
        beta_m=beta_m,
        max_orthogonality_defect=worst_orth,
        hat_m=hat_m,
        hat_M=hat_M,
    )


@dataclass
class PhiHatReport:
    hypothesis_satisfied: bool
    max_error: float | None
    charged_cells: int


def hypothesis_set_charged(
    tree: ProbTree, tau: TreeRandomTime, M: TreeProcess, side: str
) -> bool:
    """Is {dM != 0} & {Z~ = 0 < Z_-} (before) or {Z~ = 1 > Z_-} (after) hit?"""
    Z, Zt, _, _ = project_optional(tree, tau)
    for t in range(1, tree.depth + 1):
        dm = M.delta(t)
        if side == "before":
            bad = (np.abs(dm) > 0.0) & (Zt.values[t] == 0.0) & (Z.values[t - 1] > 0.0)
        else:
            bad = (np.abs(dm) > 0.0) & (Zt.values[t] == 1.0) & (Z.values[t - 1] < 1.0)
        if np.any(bad):
            return True
    return False


def verify_phi_hat_identity(
    tree: ProbTree, tau: TreeRandomTime, M: TreeProcess, side: str
) -> PhiHatReport:
    """Drift identity linking the base bracket with m to the enlarged bracket.

    before:  (1/Z_-) d<m,M>  = Phi1 Z_-^2 / (p_F(1_{Z~>0}) (Z_-^2 + d<m>)) d<M^>
    after :  d<m,M>/(1-Z_-)  = Phi2 / (p_F(1_{Z~<1}) (1 + d<m>/(1-Z_-)^2)) d<M^>
    restricted to the live (resp. dead) region.  Requires the co-jump
    hypothesis, otherwise the report flags it instead of checking.
    """
    if hypothesis_set_charged(tree, tau, M, side):
        return PhiHatReport(False, None, 0)
    result = truncation_densities(tree, tau, M, side)
    Z, Zt, m, _ = project_optional(tree, tau)
    mm = f_bracket_increments(tree, M, m)
    mvar = f_bracket_increments(tree, m, m)
    hatvar = g_bracket_increments(tree, tau, result.hat_M, result.hat_M)
    err = 0.0
    charged = 0
    for t in range(1, tree.depth + 1):
        if side == "before":
            ind = _cond_mean(
                tree, tree.f_cells(t - 1), (Zt.values[t] > 0.0).astype(float)
            )
        else:
            ind = _cond_mean(
                tree, tree.f_cells(t - 1), (Zt.values[t] < 1.0).astype(float)
            )
        z_prev = Z.values[t - 1]
        for key, idx in tau.g_cells(t - 1).items():
            live_cell = key[1] == ("a",)
            if (side == "before") != live_cell:
                continue
            anchor = idx[0]
            zp = z_prev[anchor]
            p_ind = ind[anchor]
            if p_ind <= 0.0:
                raise SingularityError(
                    f"projection indicator vanishes on a charged cell at t={t}"
                )
            charged += 1
            if side == "before":
                lhs = mm[t, anchor] / zp
                scale = zp**2 / (p_ind * (zp**2 + mvar[t, anchor]))
            else:
                lhs = mm[t, anchor] / (1.0 - zp)
                scale = 1.0 / (p_ind * (1.0 + mvar[t, anchor] / (1.0 - zp) ** 2))
            rhs = result.phi[t, anchor] * scale * hatvar[t, anchor]
            err = max(err, abs(lhs - rhs))
    return PhiHatReport(True, err, charged)


# ---------------------------------------------------------------------------
# random generators (all driven by a caller-provided Generator)
# ---------------------------------------------------------------------------


def random_tree(
    rng: np.random.Generator,
    depth: int | None = None,
    max_branching: int = 3,
) -> ProbTree:
    depth = int(depth if depth is not None else rng.integers(2, 5))
    parents, probs = [], []
    width = 1
    for t in range(depth):
        par, pr = [], []
        for u in range(width):
            k = int(rng.integers(2, max_branching + 1))
            raw = rng.uniform(0.1, 1.0, k)
            raw /= raw.sum()
            par.extend([u] * k)
            pr.extend(raw.tolist())
        parents.append(np.array(par, dtype=np.int64))
        probs.append(np.array(pr))
        width = len(par)
        if width > PATH_CAP:
            raise ValueError("tree exceeds the path cap; lower depth or branching")
    return ProbTree(parents, probs)


def random_time(
    rng: np.random.Generator, tree: ProbTree, p_inf: float = 0.3
) -> TreeRandomTime:
    vals = rng.integers(0, tree.depth + 1, tree.n_paths).astype(float)
    vals[rng.random(tree.n_paths) < p_inf] = np.inf
    return TreeRandomTime.from_values(tree, vals)


def random_honest_time(
    rng: np.random.Generator, tree: ProbTree, p_member: float = 0.35
) -> TreeRandomTime:
    while True:
        nodes = set()
        for t in range(tree.depth + 1):
            for u in range(tree.nodes_per_level[t]):
                if rng.random() < p_member:
                    nodes.add((t, u))
        if nodes:
            tt = TreeRandomTime.last_visit(tree, nodes)
            finite = np.isfinite(tt.values)
            if finite.any():
                return tt


def random_f_martingale(
    rng: np.random.Generator,
    tree: ProbTree,
    forbid: np.ndarray | None = None,
    scale: float = 1.0,
) -> TreeProcess:
    """Zero-start martingale with optional zero-jump constraints per (t, path)."""
    n, P = tree.depth, tree.n_paths
    vals = np.zeros((n + 1, P))
    for t in range(1, n + 1):
        inc = np.zeros(P)
        for node, idx in tree.f_cells(t - 1).items():
            children = {}
            for p in idx:
                children.setdefault(int(tree.path_nodes[p, t]), []).append(p)
            groups = list(children.values())
            x = rng.normal(0.0, scale, len(groups))
            free = np.ones(len(groups), dtype=bool)
            if forbid is not None:
                for j, g in enumerate(groups):
                    if forbid[t, g[0]]:
                        free[j] = False
                        x[j] = 0.0
            wts = np.array(
                [tree.path_probs[np.array(g)].sum() for g in groups]
            )
            wfree = wts[free]
            if wfree.sum() <= 0.0 or free.sum() < 2:
                x[:] = 0.0
            else:
                shift = np.dot(wts, x) / wfree.sum()
                x[free] -= shift
            for j, g in enumerate(groups):
                inc[np.array(g)] = x[j]
        vals[t] = vals[t - 1] + inc
    return TreeProcess(vals, "F")


def random_adapted_process(
    rng: np.random.Generator, tree: ProbTree, scale: float = 1.0
) -> TreeProcess:
    n, P = tree.depth, tree.n_paths
    vals = np.zeros((n + 1, P))
    for t in range(n + 1):
        for node, idx in tree.f_cells(t).items():
            vals[t, idx] = rng.normal(0.0, scale)
    return TreeProcess(vals, "F")


def random_optional_process(
    rng: np.random.Generator,
    tree: ProbTree,
    filtration: str = "F",
    tau: TreeRandomTime | None = None,
    scale: float = 1.0,
) -> TreeProcess:
    n, P = tree.depth, tree.n_paths
    vals = np.zeros((n + 1, P))
    for t in range(n + 1):
        cells = _cells_for(tree, tau, filtration, t)
        for idx in cells.values():
            vals[t, idx] = rng.normal(0.0, scale)
    return TreeProcess(vals, filtration)


def coarsen_last_level(tree: ProbTree) -> ProbTree:
    """Drop the final level (marginalizing the last step)."""
    if tree.depth < 2:
        raise ValueError("cannot coarsen a depth-1 tree")
    return ProbTree(tree.parents[:-1], tree.probs[:-1])
