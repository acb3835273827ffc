"""Command-line experiment harness.

Verbs:
  generate  write a synthetic system, its dataset CSVs, and admissible set
  train     train one checkpoint per seed, with loss-curve reports
  eval      sample posteriors from checkpoints and score them
  oracle    compare sampled graphs against the exact enumerated posterior

Errors exit nonzero with a machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import metrics, report, synth
from .dynamics import DynamicsDataset, RewardEvaluator
from .harness import (RunConfig, build_system, evaluate_checkpoint, oracle_tv,
                      sha256_file, train_policy)
from .policy import load_checkpoint, param_count, save_checkpoint


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig()
    for name in ("n", "sparsity", "mode", "epochs", "batch_size", "lr", "l0",
                 "outdir", "posterior_samples", "run_id", "node_mode",
                 "n_samples", "steps_per_epoch", "reward_batch"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "seed_list", None):
        cfg.seeds = [int(s) for s in args.seed_list.split(",")]
    if getattr(args, "duplicates", None):
        cfg.duplicates = [int(s) for s in args.duplicates.split(",")]
    if getattr(args, "error_scale", None) is not None:
        cfg.error_scale = args.error_scale
    if getattr(args, "wall_budget_s", None) is not None:
        cfg.wall_budget_s = args.wall_budget_s
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=1))


def cmd_generate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    system = build_system(cfg)
    rng = np.random.default_rng(cfg.seeds[0])
    data = synth.simulate(system, cfg.n_samples, noise=cfg.noise, rng=rng)
    data.to_csv(out / "x.csv", out / "dx.csv")
    system_blob = json.loads(system.to_json())
    system_blob["config_hash"] = cfg.hash()
    _dump_json(out / "system.json", system_blob)
    _dump_json(out / "admissible.json", {
        "n": system.d,
        "config_hash": cfg.hash(),
        "graphs": [g.ravel().astype(int).tolist() for g in system.admissible],
    })
    manifest = {
        "config": asdict(cfg),
        "config_hash": cfg.hash(),
        "n_edges": system.n_edges,
        "n_admissible": len(system.admissible),
        "artifacts": {name: sha256_file(out / name)
                      for name in ("x.csv", "dx.csv", "system.json",
                                   "admissible.json")},
    }
    _dump_json(out / "generate_manifest.json", manifest)
    print(f"generated system with {system.n_edges} edges, "
          f"{len(system.admissible)} admissible graph(s) -> {out}")
    return 0


def _load_dataset(cfg: RunConfig) -> DynamicsDataset:
    out = Path(cfg.outdir)
    x_path, dx_path = out / "x.csv", out / "dx.csv"
    if not x_path.exists() or not dx_path.exists():
        raise FileNotFoundError(f"dataset CSVs not found under {out}")
    return DynamicsDataset.from_csv(x_path, dx_path)


def cmd_train(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    data = _load_dataset(cfg)
    if data.n != cfg.n:
        raise ValueError(f"dataset has {data.n} variables, config says {cfg.n}")
    for seed in cfg.seeds:
        t0 = time.monotonic()
        result = train_policy(data, cfg, seed,
                              progress=lambda row: print(
                                  f"seed {seed} epoch {row['epoch']}: "
                                  f"db_loss={row['db_loss']:.5f} "
                                  f"log_reward={row['log_reward']:.3f}"))
        ckpt_path = out / f"checkpoint_seed{seed}.json"
        save_checkpoint(ckpt_path, result.params, result.policy_config,
                        extra_meta={"config_hash": cfg.hash(), "seed": seed})
        curve_csv = out / f"loss_curve_seed{seed}.csv"
        report.write_loss_curve_csv(result.curve, curve_csv)
        report.plot_loss_curve(result.curve, out / f"loss_curve_seed{seed}.png",
                               title=f"{cfg.run_id} seed {seed}")
        manifest = {
            "config": asdict(cfg),
            "config_hash": cfg.hash(),
            "seed": seed,
            "param_count": param_count(result.policy_config),
            "steps_done": result.steps_done,
            "duration_hours": (time.monotonic() - t0) / 3600.0,
            "loss_curve": result.curve,
            "artifacts": {p.name: sha256_file(p) for p in (ckpt_path, curve_csv)},
        }
        _dump_json(out / f"train_manifest_seed{seed}.json", manifest)
        final = result.curve[-1]["db_loss"] if result.curve else float("nan")
        print(f"seed {seed}: {result.steps_done} steps, "
              f"final db_loss={final:.5f}")
    return 0


def _load_admissible(cfg: RunConfig):
    path = Path(cfg.outdir) / "admissible.json"
    if not path.exists():
        raise FileNotFoundError(f"admissible-set file not found: {path}")
    blob = json.loads(path.read_text())
    return synth.load_graph_list(blob)


def cmd_eval(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    data = _load_dataset(cfg)
    admissible = _load_admissible(cfg)
    rows = []
    reports = []
    last_samples = None
    for seed in cfg.seeds:
        ckpt_path = out / f"checkpoint_seed{seed}.json"
        params, pcfg, meta = load_checkpoint(ckpt_path)
        if pcfg.n != data.n:
            raise ValueError(
                f"checkpoint n={pcfg.n} does not match dataset n={data.n}")
        if meta.get("config_hash") not in (None, cfg.hash()):
            raise ValueError(
                "checkpoint was trained under a different config "
                f"(hash {meta.get('config_hash')} != {cfg.hash()})")
        t0 = time.monotonic()
        rep, samples = evaluate_checkpoint(params, pcfg, admissible, cfg, seed)
        wall = time.monotonic() - t0
        reports.append(rep)
        last_samples = samples
        rows.append({"run_id": cfg.run_id, "n": cfg.n, "seed": seed,
                     "bayes_shd": repr(rep.bayes_shd), "auc": repr(rep.auc),
                     "params": param_count(pcfg),
                     "wall_seconds": f"{wall:.2f}"})
        print(f"seed {seed}: bayes_shd={rep.bayes_shd:.3f} auc={rep.auc:.3f}")
    shds = np.array([r.bayes_shd for r in reports])
    aucs = np.array([r.auc for r in reports])
    _dump_json(out / "eval_report.json", {
        "config_hash": cfg.hash(),
        "run_id": cfg.run_id,
        "n": cfg.n,
        "per_seed": [json.loads(r.to_json()) for r in reports],
        "bayes_shd_mean": float(shds.mean()),
        "bayes_shd_std": float(shds.std()),
        "auc_mean": float(aucs.mean()),
        "auc_std": float(aucs.std()),
    })
    report.write_eval_rows_csv(rows, out / "eval_rows.csv")
    labels = metrics.admissible_labels(admissible, cfg.auc_labels,
                                       marginals=last_samples.marginals)
    report.plot_marginals(last_samples.marginals, out / "eval_marginals.png",
                          labels=labels,
                          title=f"{cfg.run_id} edge marginals (seed {cfg.seeds[-1]})")
    _dump_json(out / "eval_manifest.json", {
        "config": asdict(cfg), "config_hash": cfg.hash(),
        "artifacts": {name: sha256_file(Path(cfg.outdir) / name)
                      for name in ("eval_report.json", "eval_rows.csv",
                                   "eval_marginals.png")},
    })
    print(f"bayes_shd {shds.mean():.3f} +- {shds.std():.3f} | "
          f"auc {aucs.mean():.3f} +- {aucs.std():.3f}")
    return 0


def cmd_oracle(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    if cfg.n > 3:
        raise ValueError("oracle comparison requires n <= 3")
    data = _load_dataset(cfg)
    evaluator = RewardEvaluator(data, cfg.reward_config())
    seed = cfg.seeds[0]
    params, pcfg, meta = load_checkpoint(out / f"checkpoint_seed{seed}.json")
    if pcfg.n != data.n:
        raise ValueError("checkpoint/dataset variable-count mismatch")
    tv, table = oracle_tv(params, pcfg, evaluator, seed)
    _dump_json(out / "oracle_report.json", {
        "config_hash": cfg.hash(),
        "seed": seed,
        "tv_distance": tv,
        "sample_count": 100_000,
        "table": table,
    })
    print(f"tv_distance={tv:.4f} over {len(table)} graphs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cycleflow",
        description="Posterior sampling of cyclic sparsity graphs for "
                    "dynamical systems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("generate", cmd_generate), ("train", cmd_train),
                     ("eval", cmd_eval), ("oracle", cmd_oracle)):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="JSON file of RunConfig fields")
        p.add_argument("--outdir")
        p.add_argument("--run-id", dest="run_id")
        p.add_argument("--seed-list", dest="seed_list",
                       help="comma-separated seeds, e.g. 1,2,3,4,5")
        p.add_argument("--n", type=int)
        p.add_argument("--sparsity", type=float)
        p.add_argument("--mode", choices=["linear", "sigmoid"])
        p.add_argument("--duplicates", help="comma-separated variable indices")
        p.add_argument("--n-samples", dest="n_samples", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--reward-batch", dest="reward_batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--l0", type=float)
        p.add_argument("--error-scale", dest="error_scale", type=float)
        p.add_argument("--node-mode", dest="node_mode",
                       choices=["sample", "argmax"])
        p.add_argument("--posterior-samples", dest="posterior_samples", type=int)
        p.add_argument("--wall-budget-s", dest="wall_budget_s", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.fn(cfg)
    except Exception as err:  # surface every error class as JSON on stderr
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
