"""Command line entry point: ``salsa <subcommand>``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from salsa import metrics
from salsa._rng import substream
from salsa.config import ConfigError, RunConfig, apply_override, config_from_dict, config_to_dict, load_config
from salsa.driver import RunAborted, build_objective, build_space_from_config, run
from salsa.external import ScorerError
from salsa.oracle import BudgetExhausted, EnumerationTooLarge, OracleError, brute_force_ground_truth
from salsa.space import SpaceError, generate_space, write_space

log = logging.getLogger("salsa")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_OBJECTIVE = 4
EXIT_ENUMERATION = 5

EPILOG = """\
exit codes:
  0  success
  1  unexpected internal error
  2  invalid configuration or arguments
  3  run aborted: objective budget exhausted
  4  run aborted: objective or external scorer failure
  5  space too large to enumerate

environment:
  SALSA_OUTPUT_ROOT  default parent directory for run outputs (default: ./runs)
"""


def _output_root() -> Path:
    return Path(os.environ.get("SALSA_OUTPUT_ROOT", "runs"))


def _resolve_config(args) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in (("method", "method"), ("strategy", "strategy.kind"), ("seed", "seed"),
                      ("scorer_cmd", "objective.scorer_cmd")):
        value = getattr(args, flag, None)
        if value is not None:
            if flag == "scorer_cmd":
                overrides.append("objective.kind=external")
                value = json.dumps(value)
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def _trial_seed(seed: int, trial: int) -> int:
    return seed if trial == 0 else int(substream(seed, "trial", trial).integers(2**31))


def _run_trials(config: RunConfig, out_dir: Path, trials: int) -> list[dict]:
    summaries = []
    for t in range(trials):
        data = config_to_dict(config)
        data["seed"] = _trial_seed(config.seed, t)
        cfg = config_from_dict(data)
        trial_dir = out_dir / f"trial_{t}" if trials > 1 else out_dir
        result = run(cfg, out_dir=trial_dir)
        summaries.append(json.loads((trial_dir / "summary.json").read_text()))
        log.info("trial %d seed %d: recall=%s best=%.4f", t, cfg.seed, result.final_recall,
                 summaries[-1]["best_score"])
    return summaries


def _aggregate(summaries: list[dict]) -> dict:
    out = {"trials": len(summaries)}
    for key in ("final_recall", "best_score", "topk_mean"):
        vals = [s[key] for s in summaries if s.get(key) is not None]
        if vals:
            out[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def cmd_gen_space(args) -> int:
    if args.config:
        cfg = load_config(args.config, args.set or [])
        sizes, dim, seed = cfg.space.sizes, cfg.space.dim, cfg.space.seed
    else:
        sizes, dim, seed = args.sizes, args.dim, args.seed
    if not sizes or len(sizes) < 2:
        raise ConfigError("need --sizes for at least 2 vectors")
    out = Path(args.out)
    space = generate_space(sizes, dim, seed)
    for p in write_space(space, out):
        print(p)
    return EXIT_OK


def cmd_ground_truth(args) -> int:
    cfg = _resolve_config(args)
    space = build_space_from_config(cfg)
    objective = build_objective(cfg, space)
    truth = brute_force_ground_truth(space, objective, args.k or cfg.recall_k, cap=cfg.enumeration_cap)
    rows = [(",".join(space.item_key(c)), float(s)) for c, s in truth]
    if args.out:
        metrics.write_table(args.out, ["item_ids", "score"], rows)
    else:
        for ids, s in rows:
            print(f"{ids}\t{s!r}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else _output_root() / f"{cfg.method}-{cfg.strategy.kind}-s{cfg.seed}"
    summaries = _run_trials(cfg, out, args.trials)
    agg = _aggregate(summaries)
    if args.trials > 1:
        (out / "trials_summary.json").write_text(json.dumps(agg, indent=2))
    print(json.dumps(agg))
    return EXIT_OK


def _sweep_cell(payload):
    data, out_dir, trials = payload
    cfg = config_from_dict(data)
    try:
        summaries = _run_trials(cfg, Path(out_dir), trials)
        return {"status": "ok", **_aggregate(summaries)}
    except (ConfigError, OracleError, RunAborted, SpaceError, ValueError) as exc:
        return {"status": f"error: {exc}"}


def cmd_sweep(args) -> int:
    base_overrides = list(args.set or [])
    cells: list[tuple[str, dict]] = []
    for path in args.configs or []:
        cfg = load_config(path, base_overrides)
        cells.append((Path(path).stem, config_to_dict(cfg)))
    if args.grid:
        keys, values = [], []
        for g in args.grid:
            if "=" not in g:
                raise ConfigError(f"grid entry {g!r} is not key=v1,v2")
            k, vs = g.split("=", 1)
            keys.append(k)
            values.append(vs.split(","))
        for combo in itertools.product(*values):
            overrides = base_overrides + [f"{k}={v}" for k, v in zip(keys, combo)]
            data = {}
            if args.config:
                data = config_to_dict(load_config(args.config))
            for o in overrides:
                apply_override(data, o)
            name = "_".join(f"{k.split('.')[-1]}-{v}" for k, v in zip(keys, combo))
            cells.append((name, config_to_dict(config_from_dict(data))))
    if len(cells) < 2:
        raise ConfigError("a sweep needs at least 2 configurations (--configs or --grid)")
    out = Path(args.out) if args.out else _output_root() / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    payloads = [(data, str(out / name), args.trials) for name, data in cells]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_sweep_cell, payloads))
    else:
        results = [_sweep_cell(p) for p in payloads]
    rows = []
    for (name, data), res in zip(cells, results):
        rows.append((name, data["method"], data["strategy"]["kind"], "x".join(map(str, data["space"]["sizes"])),
                     res.get("final_recall", {}).get("mean", float("nan")),
                     res.get("final_recall", {}).get("std", float("nan")),
                     res.get("best_score", {}).get("mean", float("nan")),
                     res.get("topk_mean", {}).get("mean", float("nan")), res["status"]))
    header = ["cell", "method", "strategy", "space", "recall_mean", "recall_std", "best_mean", "topk_mean", "status"]
    metrics.write_table(out / "sweep_summary.tsv", header, rows)
    print((out / "sweep_summary.tsv").read_text(), end="")
    return EXIT_OK if all(r["status"] == "ok" for r in results) else EXIT_OBJECTIVE


def cmd_summarize(args) -> int:
    rows = metrics.summarize_dir(args.directory)
    if not rows:
        raise ConfigError(f"no summary.json found under {args.directory}")
    header = list(rows[0].keys())
    out = Path(args.out) if args.out else Path(args.directory) / "summary.tsv"
    metrics.write_table(out, header, [[r[h] for h in header] for r in rows])
    print(out.read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="salsa", description="Factored active learning over product spaces.",
                                 epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, overrides=True):
        p.add_argument("--config", help="YAML run config")
        if overrides:
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("gen-space", help="write synthetic item pools", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_space)

    p = sub.add_parser("ground-truth", help="exhaustive top-k of an enumerable space", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("-k", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ground_truth)

    p = sub.add_parser("run", help="run one method (optionally several trials)", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--method", choices=["salsa", "random", "tabular-ts", "pool-al"])
    p.add_argument("--strategy", choices=["ts", "ts-oneshot", "greedy", "eps-greedy", "ucb", "ei", "pi"])
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--scorer-cmd", help="external scorer command speaking the line protocol")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid or list of configs and tabulate", epilog=EPILOG,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p)
    p.add_argument("--configs", nargs="*", help="config files, one cell each")
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2", help="cartesian grid over config keys")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="aggregate summary.json files under a directory")
    p.add_argument("directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpaceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnumerationTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENUMERATION
    except RunAborted as exc:
        cause = exc.__cause__
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_BUDGET if isinstance(cause, BudgetExhausted) else EXIT_OBJECTIVE
    except (ScorerError, OracleError) as exc:
        print(f"objective error: {exc}", file=sys.stderr)
        return EXIT_OBJECTIVE


if __name__ == "__main__":
    sys.exit(main())
