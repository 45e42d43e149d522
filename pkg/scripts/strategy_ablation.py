#!/usr/bin/env python3
"""Final recall of each acquisition strategy on the bilinear benchmark."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from salsa.acquisition import STRATEGIES
from salsa.config import config_from_dict
from salsa.driver import build_objective, build_space_from_config, ground_truth_for, run_salsa
from salsa.metrics import write_table


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--strategies", nargs="+", default=list(STRATEGIES), choices=STRATEGIES)
    ap.add_argument("--lam", type=float, default=0.3)
    ap.add_argument("--epsilon", type=float, default=0.05)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args(argv)

    base = {"objective": {"kind": "bilinear", "lam": args.lam}, "checkpoint": False}
    cfg0 = config_from_dict(base)
    space = build_space_from_config(cfg0)
    objective = build_objective(cfg0, space)
    truth = ground_truth_for(cfg0, space, objective)

    rows = []
    for kind in args.strategies:
        recalls = []
        for seed in args.seeds:
            cfg = config_from_dict({**base, "seed": seed, "strategy": {"kind": kind, "epsilon": args.epsilon}})
            res = run_salsa(cfg, space=space, objective=objective, truth=truth)
            recalls.append(res.final_recall)
            rows.append((kind, seed, res.final_recall))
        print(f"{kind:12s} recall {np.mean(recalls):.3f} +/- {np.std(recalls):.3f}  {recalls}", flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "ablation.tsv", ["strategy", "seed", "recall"], rows)


if __name__ == "__main__":
    main()
