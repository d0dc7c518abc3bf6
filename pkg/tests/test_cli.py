from __future__ import annotations

import json

from depthprune.cli import main


def write_cfg(tmp_path):
    cfg = {
        "dataset": {"kind": "blobs", "n": 200},
        "model": {"sizes": [8, 8]},
        "train": {"epochs": 3},
        "prune": {"max_iterations": 1, "retrain_epochs": 1},
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_train_probe_fold(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "t"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert main(["probe", "--config", cfg, str(out / "dense.json")]) == 0
    assert (out / "dense_layers.csv").exists()
    assert main(["fold", "--config", cfg, str(out / "dense.json"), "-o", str(out / "f.json")]) == 0
    assert json.loads((out / "f_fold.json").read_text())["removed"] >= 0
    assert "layer 0" in capsys.readouterr().out


def test_prune_and_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "runs" / "imp"
    assert main(["prune", "--config", cfg, "--out", str(out), "--method", "imp", "--zeta", "0.3", "--theta", "0.5"]) == 0
    assert json.loads((out / "config.json").read_text())["prune"]["zeta"] == 0.3
    capsys.readouterr()
    assert main(["report", str(tmp_path / "runs")]) == 0
    assert capsys.readouterr().out.startswith("run,method,H_min,top1,removed,total\nimp,imp,")


def test_theory(tmp_path, capsys):
    target = tmp_path / "th.csv"
    assert main(["theory", "--eps", "0.1", "--t-max", "1", "--mc-samples", "1000", "-o", str(target)]) == 0
    assert len(target.read_text().splitlines()) == 1 + 21


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
