"""Experiment plumbing: config files, model presets, on-disk artifacts, summaries.

A run directory holds::

    config.json          resolved config (what actually ran)
    dense.json/.bin      checkpoint after dense training
    iter_XX.json/.bin    checkpoint after each pruning iteration
    final.json/.bin      last accepted network
    neurons.csv          per-neuron state counts and entropy, every iteration
    layers.csv           per-layer entropy, every iteration
    trace.csv            one row per iteration: method, accuracy, layer entropies
    fold.json            fold manifest (when folding is requested)
    folded.json/.bin     folded network (when folding is requested)

While a run is in progress a RUNNING marker sits in the directory; ``report``
refuses directories that still carry it.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, gen_synthetic, load_idx, split
from .entropy import EntropyReport, probe, write_reports
from .folding import fold_all
from .nn import Network, TrainConfig, conv2d, dense, evaluate, mlp
from .pruning import PruneConfig, nepenthe_loop

log = logging.getLogger(__name__)

PRESETS = {
    "mlp-deep": (64, 64, 64, 64),
    "mlp-wide": (256, 256),
    "cnn-tiny": None,
}
RUNNING = "RUNNING"
TRACE_SCHEMA = 1
SUMMARY_HEADER = ("run", "method", "H_min", "top1", "removed", "total")
ENV_SEED = "DEPTHPRUNE_SEED"
ENV_OUTPUT = "DEPTHPRUNE_OUTPUT_DIR"


class ExperimentError(RuntimeError):
    pass


def trace_header(n_layers: int) -> tuple[str, ...]:
    hs = tuple(f"H_{i + 1}" for i in range(n_layers))
    return ("iteration", "method", "unpruned", "removed", "val_top1", "top1") + hs


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "blobs", "n": 2000, "noise": 0.0})
    model: dict = field(default_factory=lambda: {"preset": "mlp-deep", "activation": "relu"})
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, lr=0.01))
    prune: PruneConfig = field(default_factory=PruneConfig)
    output_dir: str = "runs/default"
    seed: int = 0
    fold: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["lr_milestones"] = list(self.train.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict, env: dict | None = None) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        known = {"dataset", "model", "train", "prune", "output_dir", "seed", "fold"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        env = os.environ if env is None else env
        if env.get(ENV_SEED):
            d["seed"] = int(env[ENV_SEED])
        if env.get(ENV_OUTPUT):
            d["output_dir"] = env[ENV_OUTPUT]
        base = cls()
        cfg = cls(
            dataset={**base.dataset, **d.get("dataset", {})},
            model={**base.model, **d.get("model", {})},
            train=TrainConfig(**{**asdict(base.train), **d.get("train", {})}),
            prune=PruneConfig(**{**asdict(base.prune), **d.get("prune", {})}),
            output_dir=str(d.get("output_dir", base.output_dir)),
            seed=int(d.get("seed", base.seed)),
            fold=bool(d.get("fold", base.fold)),
        )
        # the experiment seed drives data, init and batch order alike
        cfg.train.seed = cfg.seed
        return cfg

    @classmethod
    def load(cls, path: str | Path, env: dict | None = None) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()), env)


def build_model(model: dict, in_shape: tuple, n_classes: int, seed: int) -> Network:
    act = model.get("activation", "relu")
    if "sizes" in model:
        hidden = tuple(model["sizes"])
        preset = None
    else:
        preset = model.get("preset", "mlp-deep")
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        hidden = PRESETS[preset]
    if preset == "cnn-tiny":
        if len(in_shape) != 3:
            raise ValueError("cnn-tiny needs image inputs shaped (C, H, W)")
        c, h, w = in_shape
        rng = np.random.default_rng(seed)
        l1 = conv2d(c, 8, 3, stride=2, padding=1, activation=act, rng=rng)
        l2 = conv2d(8, 16, 3, stride=2, padding=1, activation=act, rng=rng)
        h2, w2 = (h + 1) // 2, (w + 1) // 2
        h2, w2 = (h2 + 1) // 2, (w2 + 1) // 2
        l3 = dense(16 * h2 * w2, 64, act, rng)
        l4 = dense(64, n_classes, "identity", rng)
        return Network([l1, l2, l3, l4])
    n_in = int(np.prod(in_shape))
    return mlp((n_in, *hidden, n_classes), act, seed=seed)


def load_data(source: dict, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    kind = source.get("kind", "blobs")
    if kind == "idx":
        train_ds = load_idx(source["train_images"], source["train_labels"], "train", source.get("n_classes"))
        test_ds = load_idx(source["test_images"], source["test_labels"], "test", train_ds.n_classes)
        order = np.random.default_rng(seed).permutation(len(train_ds))
        n_val = int(round(source.get("val_fraction", 0.1) * len(train_ds)))
        return train_ds.subset(order[n_val:], "train"), train_ds.subset(order[:n_val], "val"), test_ds
    ds = gen_synthetic(kind, int(source.get("n", 2000)), float(source.get("noise", 0.0)), seed, int(source.get("n_classes", 2)))
    return split(ds, source.get("test_fraction", 0.2), source.get("val_fraction", 0.1), seed)


def _write_trace(path: Path, method: str, history, n_layers: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(n_layers))
        for rec in history:
            top1 = "" if rec.test_acc is None else f"{100 * rec.test_acc:.2f}"
            hs = [f"{h:.6f}" for h in rec.report.layer_entropy]
            w.writerow(
                [rec.iteration, method, rec.unpruned, len(rec.report.removable()), f"{100 * rec.val_acc:.2f}", top1, *hs]
            )


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run dense training, the pruning loop and optional folding; return the run directory.

    The directory is wiped and rebuilt, so repeating a config reproduces the
    same bytes.
    """
    out = Path(cfg.output_dir)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    marker = out / RUNNING
    marker.write_text("run in progress\n")
    (out / "config.json").write_text(json.dumps({"version": __version__, **cfg.to_dict()}, indent=2, sort_keys=True) + "\n")

    train_ds, val_ds, test_ds = load_data(cfg.dataset, cfg.seed)
    net = build_model(cfg.model, train_ds.inputs.shape[1:], train_ds.n_classes, cfg.seed)

    def checkpoint(rec, current):
        name = "dense.json" if rec.iteration == 0 else f"iter_{rec.iteration:02d}.json"
        save_checkpoint(current, out / name, {"iteration": rec.iteration, "val_acc": rec.val_acc})

    try:
        result = nepenthe_loop(
            net, train_ds.xy, val_ds.xy, cfg.train, cfg.prune, test_data=test_ds.xy, on_iteration=checkpoint
        )
    except Exception as exc:
        done = sum(1 for _ in out.glob("iter_*.json"))
        raise ExperimentError(f"run failed during iteration {done + 1 if (out / 'dense.json').exists() else 0}: {exc}") from exc

    reports = [rec.report for rec in result.history]
    write_reports(reports, out / "neurons.csv", out / "layers.csv")
    _write_trace(out / "trace.csv", cfg.prune.method, result.history, len(result.report.layers))
    final_test = evaluate(result.net, *test_ds.xy)
    summary = {
        "method": cfg.prune.method,
        "status": result.status,
        "accepted_iteration": result.accepted_iteration,
        "dense_val_acc": result.dense_acc,
        "final_val_acc": result.history[result.accepted_iteration].val_acc,
        "final_test_acc": final_test,
        "layer_entropy": [float(h) for h in result.report.layer_entropy],
        "removable": result.report.removable(),
        "total_layers": len(result.report.layers),
    }
    save_checkpoint(result.net, out / "final.json", {"iteration": result.accepted_iteration})
    if cfg.fold:
        folded = fold_all(result.net, result.report, train_ds.inputs, test_ds.inputs)
        manifest = folded.manifest()
        manifest["test_acc_folded"] = evaluate(folded.net, *test_ds.xy)
        (out / "fold.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        save_checkpoint(folded.net, out / "folded.json")
        summary["folded"] = folded.removed
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    marker.unlink()
    return out


def h_min(layer_entropy) -> float:
    """Smallest strictly positive layer entropy; NaN when every layer is 0."""
    h = np.asarray(layer_entropy, dtype=np.float64)
    pos = h[h > 0]
    return float(pos.min()) if len(pos) else float("nan")


def summarize(run_dir: str | Path) -> dict:
    run_dir = Path(run_dir)
    if (run_dir / RUNNING).exists():
        raise ExperimentError(f"{run_dir} holds a partial run")
    path = run_dir / "result.json"
    if not path.exists():
        raise ExperimentError(f"{run_dir} has no result.json")
    res = json.loads(path.read_text())
    return {
        "run": run_dir.name,
        "method": res["method"],
        "H_min": h_min(res["layer_entropy"]),
        "top1": 100 * res["final_test_acc"],
        "removed": len(res["removable"]),
        "total": res["total_layers"],
    }


def format_summary_row(row: dict) -> list[str]:
    hm = "" if np.isnan(row["H_min"]) else f"{row['H_min']:.4f}"
    return [row["run"], row["method"], hm, f"{row['top1']:.2f}", str(row["removed"]), str(row["total"])]


def report(out_dir: str | Path, csv_path: str | Path | None = None) -> str:
    """Summarize one run directory, or every run directory under ``out_dir``."""
    out_dir = Path(out_dir)
    if (out_dir / "result.json").exists() or (out_dir / RUNNING).exists():
        runs = [out_dir]
    else:
        runs = sorted(p for p in out_dir.iterdir() if p.is_dir())
        if not runs:
            raise ExperimentError(f"no runs under {out_dir}")
    rows = [format_summary_row(summarize(r)) for r in runs]
    target = Path(csv_path) if csv_path else out_dir / "summary.csv"
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(rows)
    return target.read_text()


def probe_checkpoint(path: str | Path, inputs: np.ndarray, eps_state: float = 0.0) -> EntropyReport:
    return probe(load_checkpoint(path), inputs, 0, eps_state)
