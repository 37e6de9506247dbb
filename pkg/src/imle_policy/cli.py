"""imle-policy command line: gen-data, train, rollout, sweep-data, eval-modes, bench.

Exit codes: 0 success, 1 runtime failure, 2 usage or malformed config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import METHODS, ConfigError, RunConfig
from .imle_core import TrainingReport
from .metrics import ROLLOUT_HEADER
from .policy import Policy
from .storage import write_csv

log = logging.getLogger("imle_policy")


def load_config(args) -> RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        cfg = RunConfig.from_ini(text)
    else:
        cfg = RunConfig.for_task(args.task or "toy")
    over = {}
    if args.task and args.task != cfg.task:
        raise ConfigError(f"--task {args.task} conflicts with config task {cfg.task}")
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = args.out
    if args.method is not None:
        over["method"] = args.method
    if getattr(args, "epochs", None) is not None:
        over["train"] = replace(cfg.train, epochs=args.epochs)
    if getattr(args, "n_demos", None) is not None:
        over["n_demos"] = args.n_demos
    try:
        return cfg.with_(**over) if over else cfg
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _report_name(cfg: RunConfig, kind: str) -> str:
    return f"{kind}_{cfg.method}_{cfg.digest()}_s{cfg.seed}.csv"


def _dataset(cfg: RunConfig, path: str | None) -> ex.Dataset:
    p = Path(path) if path else Path(cfg.out) / "dataset.bin"
    if not p.exists():
        raise FileNotFoundError(f"dataset {p} not found; run gen-data first")
    return ex.Dataset.load(p)


def checkpoint_path(cfg: RunConfig, epoch: int | None = None) -> Path:
    tag = "" if epoch is None else f"_e{epoch}"
    return Path(cfg.out) / f"model_{cfg.method}_s{cfg.seed}{tag}.ckpt"


# -- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, args) -> int:
    ds = ex.build_dataset(cfg)
    out = _out(cfg)
    ds.save(out / "dataset.bin")
    modes = Counter(ds.episode_modes)
    lines = [
        f"task: {ds.task}",
        f"episodes: {ds.n_episodes}",
        f"windows: {len(ds)}",
        "mode counts: " + ", ".join(f"{k}={v}" for k, v in sorted(modes.items())),
    ]
    (out / "dataset_summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg, args.data)
    if cfg.fraction < 1.0:
        idx = ds.episode_subset(cfg.fraction, cfg.seed)
    else:
        idx = None
    every = cfg.checkpoint_every

    def periodic(epoch, net, stats):
        if every and (epoch + 1) % every == 0 and epoch + 1 < cfg.train.epochs:
            ex.save_policy(checkpoint_path(cfg, epoch + 1), cfg, ex.make_policy(cfg, net, ds.normalizer), epoch + 1)

    policy, report = ex.train_method(cfg, ds, idx, on_epoch_end=periodic)
    ckpt = checkpoint_path(cfg)
    ex.save_policy(ckpt, cfg, policy, cfg.train.epochs)
    csv_path = write_csv(_out(cfg) / _report_name(cfg, "train"), TrainingReport.CSV_HEADER, report.rows())
    print(f"checkpoint: {ckpt}")
    print(f"report: {csv_path}")
    if report.epochs:
        print(f"final mean loss: {report.final_loss:.6f}")
    return 0


def cmd_rollout(cfg: RunConfig, args) -> int:
    policy, header = ex.load_policy(args.checkpoint or checkpoint_path(cfg))
    if header["task"] != cfg.task:
        raise ValueError(f"checkpoint was trained on {header['task']}, config task is {cfg.task}")
    rate, logs = ex.evaluate(cfg, policy)
    out = _out(cfg)
    write_csv(out / _report_name(cfg, "rollout"), ROLLOUT_HEADER, (r for l in logs for r in l.rows))
    write_csv(out / _report_name(cfg, "episodes"), ("episode", "success", "steps"),
              ((l.episode, int(l.success), l.steps) for l in logs))
    print(f"success rate: {rate:.4f} ({sum(l.success for l in logs)}/{len(logs)})")
    return 0


def cmd_sweep_data(cfg: RunConfig, args) -> int:
    fractions = [float(f) for f in args.fractions.split(",")]
    methods = args.methods.split(",")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}")
    ds = ex.Dataset.load(args.data) if args.data else None
    rows = ex.sweep(cfg, fractions, methods, ds)
    path = write_csv(_out(cfg) / _report_name(cfg, "sweep"), ex.SWEEP_HEADER, rows)
    for m in methods:
        print(f"{m}: smallest fraction reaching 0.5 = {ex.smallest_fraction(rows, m)}")
    print(f"report: {path}")
    return 0


def cmd_eval_modes(cfg: RunConfig, args) -> int:
    policy, _ = ex.load_policy(args.checkpoint or checkpoint_path(cfg))
    grid = [float(g) for g in args.grid.split(",")]
    results = ex.eval_modes(cfg, policy, grid)
    path = write_csv(_out(cfg) / _report_name(cfg, "modes"), ex.MODE_HEADER, ex.mode_rows(results))
    for c, r in results:
        print(f"condition {c:+.3f}: {r.counts} recall={r.recall:.2f} collapse={r.collapse}")
    print(f"report: {path}")
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    ds = ex.build_dataset(cfg.with_(n_demos=max(2, min(cfg.n_demos, 4))))
    window = ex.probe_window(cfg)
    imle_cfg = cfg.with_(method="imle")
    fm_cfg = cfg.with_(method="fm_k")
    if args.imle_checkpoint:
        imle, _ = ex.load_policy(args.imle_checkpoint)
    else:
        imle = ex.fresh_policy(imle_cfg, ds)
    if args.fm_checkpoint:
        fm_net = ex.load_policy(args.fm_checkpoint)[0].net
    else:
        fm_net = ex.fresh_policy(fm_cfg, ds).net
    policies = {"imle": imle}
    for k in args.fm_steps:
        policies[f"fm{k}"] = Policy(fm_net, imle.normalizer, imle.obs_horizon, imle.action_horizon, fm_steps=k)
    reports = ex.bench(policies, window, runs=30, seed=cfg.seed)
    rows = [(name, r.k_inner_steps, r.runs, f"{r.mean_ms:.6f}", f"{r.std_ms:.6f}", f"{r.hz:.1f}")
            for name, r in reports.items()]
    path = write_csv(_out(cfg) / _report_name(cfg, "bench"), ex.BENCH_HEADER, rows)
    for name, r in reports.items():
        print(f"{name:>8}: {r.mean_ms:.4f} ms ± {r.std_ms:.4f} ({r.hz:.0f} Hz, k={r.k_inner_steps})")
    slow = max(reports.values(), key=lambda r: r.mean_ms)
    print(f"slowest / imle = {slow.mean_ms / reports['imle'].mean_ms:.1f}x")
    print(f"report: {path}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "sweep-data": cmd_sweep_data,
    "eval-modes": cmd_eval_modes,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run config")
    common.add_argument("--task", choices=("toy", "pushlite"), help="task when no config is given")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--method", help="one of " + ", ".join(METHODS))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="imle-policy", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="generate a demonstration dataset")
    g.add_argument("--n-demos", type=int)
    t = sub.add_parser("train", parents=[common], help="train a policy")
    t.add_argument("--data")
    t.add_argument("--epochs", type=int)
    r = sub.add_parser("rollout", parents=[common], help="evaluate a checkpoint")
    r.add_argument("--checkpoint")
    s = sub.add_parser("sweep-data", parents=[common], help="dataset-size study")
    s.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    s.add_argument("--methods", default="imle,fm1")
    s.add_argument("--data")
    s.add_argument("--epochs", type=int)
    e = sub.add_parser("eval-modes", parents=[common], help="mode coverage over a grid of conditions")
    e.add_argument("--checkpoint")
    e.add_argument("--grid", required=True, help="comma-separated conditions")
    b = sub.add_parser("bench", parents=[common], help="generation latency")
    b.add_argument("--imle-checkpoint")
    b.add_argument("--fm-checkpoint")
    b.add_argument("--fm-steps", type=lambda s: [int(k) for k in s.split(",")], default=[1, 100])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every other failure maps to exit 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
