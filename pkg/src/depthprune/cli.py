"""Command-line entry point: ``depthprune <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .entropy import probe, write_reports
from .experiment import ExperimentConfig, build_model, load_data, report, run_experiment
from .folding import fold_all
from .nn import evaluate, train
from .theory import TheoryParams, entropy_curve, write_curve_csv


def _config(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "out", None):
        raw["output_dir"] = args.out
    return ExperimentConfig.from_dict(raw)


def cmd_train(args) -> int:
    cfg = _config(args)
    train_ds, val_ds, test_ds = load_data(cfg.dataset, cfg.seed)
    net = build_model(cfg.model, train_ds.inputs.shape[1:], train_ds.n_classes, cfg.seed)
    stats = train(net, *train_ds.xy, cfg.train)
    val, test = evaluate(net, *val_ds.xy), evaluate(net, *test_ds.xy)
    out = Path(cfg.output_dir)
    save_checkpoint(net, out / "dense.json", {"val_acc": val, "test_acc": test})
    print(f"loss={stats.final_loss:.6f} val_top1={100 * val:.2f} top1={100 * test:.2f} -> {out / 'dense.json'}")
    return 0


def cmd_prune(args) -> int:
    cfg = _config(args)
    over = {k: v for k, v in (("method", args.method), ("zeta", args.zeta), ("theta", args.theta)) if v is not None}
    if args.iterations is not None:
        over["max_iterations"] = args.iterations
    cfg.prune = replace(cfg.prune, **over)
    out = run_experiment(cfg)
    print((out / "trace.csv").read_text(), end="")
    return 0


def cmd_probe(args) -> int:
    cfg = _config(args)
    train_ds, _, _ = load_data(cfg.dataset, cfg.seed)
    net = load_checkpoint(args.checkpoint)
    rep = probe(net, train_ds.inputs, 0, cfg.prune.eps_state)
    out = Path(args.out_prefix or Path(args.checkpoint).with_suffix(""))
    write_reports([rep], f"{out}_neurons.csv", f"{out}_layers.csv")
    for layer, h in zip(rep.layers, rep.layer_entropy):
        print(f"layer {layer}: H={h:.6f}")
    return 0


def cmd_fold(args) -> int:
    cfg = _config(args)
    train_ds, _, test_ds = load_data(cfg.dataset, cfg.seed)
    net = load_checkpoint(args.checkpoint)
    rep = probe(net, train_ds.inputs, 0, cfg.prune.eps_state)
    res = fold_all(net, rep, train_ds.inputs, test_ds.inputs)
    target = Path(args.output)
    save_checkpoint(res.net, target)
    target.with_name(target.stem + "_fold.json").write_text(json.dumps(res.manifest(), indent=2, sort_keys=True) + "\n")
    print(f"removed {res.removed} layer(s); max deviation {res.dev_reference:.3g} (train) {res.dev_heldout:.3g} (test)")
    return 0


def cmd_theory(args) -> int:
    grid = np.round(np.arange(0.0, args.t_max + 1e-9, args.t_step), 10)
    params = TheoryParams(t_grid=grid, eps=args.eps, mc_samples=args.mc_samples, rng_seed=args.seed or 0)
    curve = entropy_curve(params, monte_carlo=args.mc_samples > 0)
    write_curve_csv(curve, args.output)
    print(Path(args.output).read_text(), end="")
    return 0


def cmd_report(args) -> int:
    print(report(args.run_dir, args.output), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthprune", description="Entropy-guided pruning and layer folding.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("train", help="train the dense model")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("prune", help="run the prune / retrain loop")
    common(sp)
    sp.add_argument("--method", choices=("nepenthe", "imp"))
    sp.add_argument("--zeta", type=float)
    sp.add_argument("--theta", type=float)
    sp.add_argument("--iterations", type=int)
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("probe", help="entropy report of a checkpoint on the train split")
    common(sp)
    sp.add_argument("checkpoint")
    sp.add_argument("--out-prefix")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("fold", help="fold zero-entropy layers of a checkpoint")
    common(sp)
    sp.add_argument("checkpoint")
    sp.add_argument("-o", "--output", required=True)
    sp.set_defaults(func=cmd_fold)

    sp = sub.add_parser("theory", help="analytic and Monte Carlo entropy curves")
    sp.add_argument("--eps", type=float, default=0.05)
    sp.add_argument("--t-max", type=float, default=3.0)
    sp.add_argument("--t-step", type=float, default=0.05)
    sp.add_argument("--mc-samples", type=int, default=1_000_000)
    sp.add_argument("--seed", type=int)
    sp.add_argument("-o", "--output", default="theory.csv")
    sp.set_defaults(func=cmd_theory)

    sp = sub.add_parser("report", help="summarize completed runs")
    sp.add_argument("run_dir")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
