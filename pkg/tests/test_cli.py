import json
from pathlib import Path

import pytest

from enlab.cli import main
from enlab.experiments import EXPERIMENTS, ExperimentConfig, UsageError, run


def test_list_command(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in EXPERIMENTS:
        assert name in out


def test_run_small_experiment(tmp_path, capsys):
    code = main([
        "run", "counterexample-stopped",
        "--paths", "20", "--seed", "5", "--out", str(tmp_path), "--csv-paths", "1",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["pass"] is True
    assert report["experiment"] == "counterexample-stopped"
    assert (tmp_path / "paths" / "path_00000.csv").exists()
    assert (tmp_path / "figures" / "sample_path.png").exists()


def test_csv_schema(tmp_path):
    run(ExperimentConfig(
        experiment="counterexample-stopped", n_paths=5, seed=5,
        out_dir=str(tmp_path), csv_paths=1,
    ))
    header = (tmp_path / "paths" / "path_00000.csv").read_text().splitlines()[0]
    assert header == "t,Z,Ztilde,m,drift_density,bracket_density,window_before,window_after"


def test_config_file_and_overrides(tmp_path):
    cfg = {
        "experiment": "counterexample-stopped",
        "model": "weighted",
        "lambda": 1.0,
        "k1": 0.5,
        "k2": 0.5,
        "n_paths": 10,
        "seed": 2,
        "out_dir": str(tmp_path / "a"),
    }
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps(cfg))
    code = main([
        "run", "counterexample-stopped", "--config", str(cfg_file),
        "--seed", "3", "--out", str(tmp_path / "b"), "--csv-paths", "0",
    ])
    assert code == 0
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert report["seed"] == 3
    assert report["config"]["n_paths"] == 10


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg_file = tmp_path / "bad.json"
    cfg_file.write_text(json.dumps({"experiment": "ruin-table", "bogus": 1}))
    code = main(["run", "ruin-table", "--config", str(cfg_file)])
    assert code == 2


def test_missing_config_file_is_usage_error():
    assert main(["run", "ruin-table", "--config", "/does/not/exist.json"]) == 2


def test_unknown_experiment_raises_usage_error():
    with pytest.raises(UsageError):
        run(ExperimentConfig(experiment="nope"))


def test_bad_parameters_exit_code(tmp_path):
    cfg_file = tmp_path / "bad2.json"
    cfg_file.write_text(json.dumps({
        "experiment": "counterexample-stopped", "k1": 0.9, "k2": 0.9,
        "n_paths": 3, "out_dir": str(tmp_path),
    }))
    assert main(["run", "counterexample-stopped", "--config", str(cfg_file)]) == 2
