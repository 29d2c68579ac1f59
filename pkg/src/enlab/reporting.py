"""Report assembly: JSON summaries, per-path CSV tables, rendered figures.

CSV column schema is fixed so external tools can re-plot:
``t, Z, Ztilde, m, drift_density, bracket_density, window_before, window_after``.
Reports carry no timestamps; identical configurations produce byte-identical
output trees.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .measures import DriftBracketPair
from .models import AzemaTriple

__all__ = [
    "Check",
    "ExperimentReport",
    "write_report",
    "write_path_csv",
    "path_table_rows",
    "figure_path_panel",
    "figure_density_mismatch",
    "figure_ruin",
    "figure_error_bars",
    "figure_fractions",
]

CSV_COLUMNS = (
    "t",
    "Z",
    "Ztilde",
    "m",
    "drift_density",
    "bracket_density",
    "window_before",
    "window_after",
)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": _jsonable(self.value),
            "tolerance": _jsonable(self.tolerance),
            "note": self.note,
        }


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


@dataclass
class ExperimentReport:
    """Checks plus provenance.

    ``timing`` is the one volatile section (wall-clock measurements); byte
    comparisons of reports strip it.  ``execution`` holds parameters that do
    not affect results (output directory, thread count) and stays outside the
    config hash.
    """

    experiment: str
    config: dict
    seed: int
    checks: list[Check] = field(default_factory=list)
    summaries: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    execution: dict = field(default_factory=dict)

    def add(self, name: str, value: float, tolerance: float, note: str = "",
            larger_ok: bool = False) -> Check:
        passed = value >= tolerance if larger_ok else value <= tolerance
        chk = Check(name, bool(passed), float(value), float(tolerance), note)
        self.checks.append(chk)
        return chk

    def add_flag(self, name: str, passed: bool, note: str = "") -> Check:
        chk = Check(name, bool(passed), float(passed), 1.0, note)
        self.checks.append(chk)
        return chk

    def add_timing(self, seconds: float, budget: float):
        self.timing = {
            "runtime_seconds": float(seconds),
            "budget_seconds": float(budget),
            "within_budget": bool(seconds <= budget),
        }

    @property
    def passed(self) -> bool:
        ok = all(c.passed for c in self.checks)
        if self.timing:
            ok = ok and self.timing["within_budget"]
        return ok

    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "checks": [c.to_dict() for c in self.checks],
            "summaries": json.loads(json.dumps(self.summaries, sort_keys=True, default=_jsonable)),
            "pass": self.passed,
            "timing": self.timing,
            "execution": self.execution,
        }


def write_report(report: ExperimentReport, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# per-path CSV tables
# ---------------------------------------------------------------------------


def path_table_rows(
    azema: AzemaTriple,
    pair_before: DriftBracketPair | None,
    pair_after: DriftBracketPair | None,
    n_grid: int = 200,
) -> list[tuple]:
    horizon = azema.z.horizon
    ts = sorted(
        set(np.linspace(0.0, horizon, n_grid).tolist())
        | set(azema.z.event_times)
    )
    tau = azema.tau
    rows = []
    for t in ts:
        drift = bracket = 0.0
        before = 1.0 if t <= tau else 0.0
        after = 1.0 - before
        if pair_before is not None and t <= tau:
            drift = pair_before.drift.density_at(t)
            bracket = pair_before.bracket.density_at(t)
        elif pair_after is not None and t > tau:
            drift = pair_after.drift.density_at(t)
            bracket = pair_after.bracket.density_at(t)
        rows.append(
            (
                t,
                azema.z.value(t),
                azema.z_tilde(t),
                azema.m.value(t),
                drift,
                bracket,
                before,
                after,
            )
        )
    return rows


def write_path_csv(path: Path, rows: list[tuple]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([f"{v:.12g}" for v in row])


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _save(fig, out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=130)
    plt.close(fig)


def figure_path_panel(rows: list[tuple], tau: float, out: Path, title: str):
    arr = np.array(rows)
    fig, axes = plt.subplots(2, 1, figsize=(7.5, 5.5), sharex=True)
    axes[0].plot(arr[:, 0], arr[:, 1], label="Z", lw=1.2)
    axes[0].plot(arr[:, 0], arr[:, 2], label="Z tilde", lw=0.9, ls="--")
    axes[0].plot(arr[:, 0], arr[:, 3], label="m", lw=1.2)
    axes[0].axvline(tau, color="k", lw=0.8, ls=":", label="tau")
    axes[0].legend(loc="best", fontsize=8)
    axes[0].set_ylabel("survival data")
    axes[1].plot(arr[:, 0], arr[:, 4], label="drift density", lw=1.2)
    axes[1].plot(arr[:, 0], arr[:, 5], label="bracket density", lw=1.2)
    axes[1].axvline(tau, color="k", lw=0.8, ls=":")
    axes[1].legend(loc="best", fontsize=8)
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("densities")
    fig.suptitle(title)
    _save(fig, out)


def figure_density_mismatch(pair: DriftBracketPair, out: Path, title: str):
    lo, hi = pair.window.bounds()
    ts = np.linspace(lo, hi, 400)
    drift = [pair.drift.density_at(float(t)) for t in ts]
    bracket = [pair.bracket.density_at(float(t)) for t in ts]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(ts, drift, label="drift density", lw=1.2)
    ax.plot(ts, bracket, label="bracket density", lw=1.2)
    for a, b in pair.drift.support_intervals():
        ax.axvspan(a, b, color="tab:red", alpha=0.08)
    for a, b in pair.bracket.support_intervals():
        ax.axvspan(a, b, color="tab:blue", alpha=0.08)
    ax.legend(fontsize=8)
    ax.set_xlabel("t")
    ax.set_title(title)
    _save(fig, out)


def figure_ruin(xs: np.ndarray, values: np.ndarray, adjustment: float, out: Path):
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.semilogy(xs, np.maximum(values, 1e-12), label="ruin probability")
    ax.semilogy(xs, np.exp(-adjustment * xs), ls="--", label="exponential bound")
    ax.set_xlabel("initial clearance x")
    ax.set_ylabel("probability")
    ax.legend(fontsize=8)
    ax.set_title("Ruin probability table")
    _save(fig, out)


def figure_error_bars(names: list[str], errors: list[float], tol: float, out: Path, title: str):
    fig, ax = plt.subplots(figsize=(7.5, 4.2))
    ys = np.maximum(np.array(errors, dtype=float), 1e-18)
    ax.bar(range(len(names)), ys, color="tab:blue")
    ax.axhline(tol, color="tab:red", ls="--", lw=1.0, label=f"tolerance {tol:g}")
    ax.set_yscale("log")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=35, ha="right", fontsize=7)
    ax.set_ylabel("max |error|")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, out)


def figure_fractions(labels: list[str], fractions: list[float], out: Path, title: str):
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(range(len(labels)), fractions, color="tab:purple")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("fraction of paths")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, out)
