#!/usr/bin/env python3
"""Recall of every method on the seeded 100x100 additive benchmark.

    python scripts/run_benchmark.py --seeds 0 1 2 3 4 --out runs/benchmark
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from salsa.config import config_from_dict
from salsa.driver import build_objective, build_space_from_config, ground_truth_for, run
from salsa.metrics import write_table

VARIANTS = {
    "salsa": {"method": "salsa"},
    "salsa-one-model": {"method": "salsa", "surrogate": {"mode": "one-model"}},
    "random": {"method": "random"},
    "tabular-ts": {"method": "tabular-ts"},
    "pool-al": {"method": "pool-al"},
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--objective", default="additive", choices=["additive", "bilinear"])
    ap.add_argument("--out", default="runs/benchmark")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = config_from_dict({"objective": {"kind": args.objective}, "checkpoint": False})
    space = build_space_from_config(base)
    objective = build_objective(base, space)
    truth = ground_truth_for(base, space, objective)

    rows = []
    for name in args.variants:
        recalls = []
        for seed in args.seeds:
            cfg = config_from_dict({**VARIANTS[name], "objective": {"kind": args.objective}, "seed": seed,
                                    "checkpoint": False})
            t0 = time.perf_counter()
            res = run(cfg, out_dir=out / name / f"seed_{seed}", space=space, objective=objective, truth=truth)
            elapsed = time.perf_counter() - t0
            recalls.append(res.final_recall)
            rows.append((name, seed, res.final_recall, elapsed))
            print(f"{name:16s} seed={seed} recall={res.final_recall:.3f} time={elapsed:.1f}s", flush=True)
        print(f"{name:16s} mean recall {np.mean(recalls):.3f} +/- {np.std(recalls):.3f}")
    write_table(out / "benchmark.tsv", ["variant", "seed", "recall", "seconds"], rows)


if __name__ == "__main__":
    main()
