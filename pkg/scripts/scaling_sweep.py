#!/usr/bin/env python3
"""Fixed budget over growing factored spaces: best scores, peak memory, inference count.

The spaces are far too large to enumerate, so quality is reported as the
mean of the best 100 scores found.
"""

from __future__ import annotations

import argparse
import time
import tracemalloc
from pathlib import Path

from salsa.config import config_from_dict
from salsa.driver import run_salsa
from salsa.metrics import write_table


def measure(pool: int, seed: int, batch: int, rounds: int, dim: int) -> dict:
    cfg = config_from_dict({"space": {"sizes": [pool, pool], "dim": dim, "seed": seed}, "seed": seed,
                            "batch_size": batch, "n_rounds": rounds, "recall_k": 0, "checkpoint": False})
    tracemalloc.start()
    t0 = time.perf_counter()
    res = run_salsa(cfg)
    elapsed = time.perf_counter() - t0
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    top = sorted(res.ledger.scores.values(), reverse=True)[:100]
    return {
        "pool": pool,
        "seed": seed,
        "topk_mean": sum(top) / len(top),
        "peak_bytes": peak,
        "forward_passes": [r["forward_passes"] for r in res.records[:-1]],
        "seconds": elapsed,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pools", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--batch-size", type=int, default=1000)
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--out", default="runs/scaling")
    args = ap.parse_args(argv)

    rows = []
    for pool in args.pools:
        for seed in args.seeds:
            m = measure(pool, seed, args.batch_size, args.rounds, args.dim)
            print(f"{pool}x{pool} seed={seed} top100={m['topk_mean']:.4f} peak={m['peak_bytes'] / 2**20:.1f}MiB "
                  f"passes/round={set(m['forward_passes'])} time={m['seconds']:.0f}s", flush=True)
            rows.append((pool, seed, m["topk_mean"], m["peak_bytes"], m["seconds"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "scaling.tsv", ["pool", "seed", "topk_mean", "peak_bytes", "seconds"], rows)


if __name__ == "__main__":
    main()
