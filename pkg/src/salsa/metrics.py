"""Recall, score summaries, heatmap data, diversity and timing rollups.

Every writer here emits a headered tab-separated file and has a matching
reader that returns exactly what was written.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PHASES = ("scoring", "training", "inference", "acquisition")


def recall_at_k(acquired_keys: Iterable[tuple], truth_keys: Sequence[tuple], k: int | None = None) -> float:
    """Fraction of the true top-k present among the acquired candidates."""
    k = len(truth_keys) if k is None else k
    if k > len(truth_keys):
        raise ValueError(f"k={k} exceeds ground-truth size {len(truth_keys)}")
    if k == 0:
        return 0.0
    truth = set(map(tuple, truth_keys[:k]))
    return len(truth.intersection(map(tuple, acquired_keys))) / k


def recall_curve(records: Sequence[dict]) -> list[tuple[int, float]]:
    return [(r["cumulative_acquired"], r["recall"]) for r in records if r.get("recall") is not None]


def diversity_count(ledger, threshold: float) -> int:
    """Distinct vector-0 items among candidates scoring strictly above ``threshold``."""
    return len({c.indices[0] for c, s in ledger.items() if s > threshold})


def topk_distribution(ledger, k: int, n_rounds: int | None = None) -> tuple[list[dict], list[dict]]:
    """Per-round min/max/mean of the best ``k`` scores seen so far, plus the
    final top-k with the round each member was acquired in."""
    if not len(ledger):
        return [], []
    rounds = np.array([ledger.rounds[c] for c in ledger])
    scores = np.array([ledger.scores[c] for c in ledger])
    last = int(rounds.max()) if n_rounds is None else n_rounds
    rows = []
    for r in range(int(rounds.min()), last + 1):
        seen = scores[rounds <= r]
        if len(seen) == 0:
            continue
        top = np.sort(seen)[::-1][:k]
        rows.append({"round": r, "n": len(top), "min": float(top.min()), "max": float(top.max()),
                     "mean": float(top.mean())})
    final = [{"indices": list(c.indices), "score": s, "round": ledger.rounds[c]} for c, s in ledger.top_k(k)]
    return rows, final


def timing_rollup(trials: Sequence[Sequence[dict]]) -> dict[str, dict[str, float]]:
    """Per-phase totals for each trial, then mean and (population) std across trials."""
    if not trials:
        raise ValueError("need at least one trial")
    out = {}
    for phase in PHASES + ("overall",):
        totals = []
        for records in trials:
            if phase == "overall":
                totals.append(sum(sum(r["timing"].get(p, 0.0) for p in PHASES) for r in records))
            else:
                totals.append(sum(r["timing"].get(phase, 0.0) for r in records))
        out[phase] = {"mean": float(np.mean(totals)), "std": float(np.std(totals)), "totals": totals}
    return out


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and coefficient of determination."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return float(slope), 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0


# --- heatmap data -----------------------------------------------------------


def heatmap_ranks(probabilities: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Rank of every item when its pool is sorted ascending by probability (stable)."""
    ranks = []
    for probs in probabilities:
        order = np.argsort(np.asarray(probs), kind="stable")
        r = np.empty(len(order), dtype=np.int64)
        r[order] = np.arange(len(order))
        ranks.append(r)
    return ranks


def heatmap_export(directory: str | Path, space, probabilities: Sequence[np.ndarray],
                   truth: Sequence, round_index: int) -> tuple[Path, Path]:
    """Write the item axis file (one row per item) and the truth-coordinate file."""
    if len(probabilities) != space.n_vectors or any(
        len(p) != len(s) for p, s in zip(probabilities, space.sets)
    ):
        raise ValueError("need one probability for every item of every vector")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ranks = heatmap_ranks(probabilities)
    items_path = directory / f"heatmap_items_r{round_index:03d}.tsv"
    with open(items_path, "w") as fh:
        fh.write("vector_index\trank\titem_id\tprobability\n")
        for v, (s, probs, r) in enumerate(zip(space.sets, probabilities, ranks)):
            for i in np.argsort(r):
                fh.write(f"{v}\t{int(r[i])}\t{s.item_ids[i]}\t{float(probs[i])!r}\n")
    truth_path = directory / f"heatmap_truth_r{round_index:03d}.tsv"
    with open(truth_path, "w") as fh:
        cols = [f"rank_{v}" for v in range(space.n_vectors)] + [f"item_{v}" for v in range(space.n_vectors)]
        fh.write("\t".join(cols + ["score"]) + "\n")
        for cand, score in truth:
            rk = [str(int(ranks[v][i])) for v, i in enumerate(cand.indices)]
            ids = [space.sets[v].item_ids[i] for v, i in enumerate(cand.indices)]
            fh.write("\t".join(rk + ids + [repr(float(score))]) + "\n")
    return items_path, truth_path


def read_heatmap_items(path) -> list[dict]:
    return [
        {"vector_index": int(v), "rank": int(r), "item_id": i, "probability": float(p)}
        for v, r, i, p in _read_rows(path)
    ]


def read_heatmap_truth(path) -> list[dict]:
    rows = _read_rows(path, keep_header=True)
    header, body = rows[0], rows[1:]
    n = (len(header) - 1) // 2
    return [{"ranks": tuple(int(x) for x in r[:n]), "items": tuple(r[n : 2 * n]), "score": float(r[-1])}
            for r in body]


def _read_rows(path, keep_header=False):
    with open(path) as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    return rows if keep_header else rows[1:]


# --- run-level files ----------------------------------------------------------


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")


def read_table(path) -> list[dict]:
    rows = _read_rows(path, keep_header=True)
    header = rows[0]
    out = []
    for r in rows[1:]:
        out.append({h: _parse_cell(x) for h, x in zip(header, r)})
    return out


def _parse_cell(x: str):
    for cast in (int, float):
        try:
            return cast(x)
        except ValueError:
            pass
    return x


def write_recall_curve(path, records: Sequence[dict]) -> None:
    write_table(path, ["round", "molecules_acquired", "recall"],
                [(r["round"], r["cumulative_acquired"], r["recall"]) for r in records if r.get("recall") is not None])


def write_topk(path, rows: Sequence[dict]) -> None:
    write_table(path, ["round", "n", "min", "max", "mean"], [(r["round"], r["n"], r["min"], r["max"], r["mean"]) for r in rows])


def write_final_topk(path, final: Sequence[dict], space) -> None:
    write_table(path, ["item_ids", "score", "round"],
                [(",".join(space.sets[v].item_ids[i] for v, i in enumerate(f["indices"])), float(f["score"]), f["round"])
                 for f in final])


def write_timing(path, records: Sequence[dict]) -> None:
    write_table(path, ["round", *PHASES],
                [(r["round"], *[float(r["timing"].get(p, 0.0)) for p in PHASES]) for r in records])


def run_summary(records: Sequence[dict], ledger, config_dict: dict, k: int) -> dict:
    top = sorted(ledger.scores.values(), reverse=True)[:k]
    last = records[-1] if records else {}
    return {
        "method": config_dict.get("method"),
        "strategy": config_dict.get("strategy", {}).get("kind"),
        "seed": config_dict.get("seed"),
        "space_shape": config_dict.get("_space_shape"),
        "rounds_completed": len(records),
        "molecules_acquired": ledger.total_calls,
        "unbudgeted_calls": ledger.unbudgeted_calls,
        "best_score": max(top) if top else None,
        "topk_mean": float(np.mean(top)) if top else None,
        "final_recall": last.get("recall"),
        "converged": any(r.get("converged") for r in records),
    }


def summarize_dir(directory: str | Path) -> list[dict]:
    """Group every ``summary.json`` below ``directory`` by (method, strategy, shape)
    and report mean and std of the headline numbers."""
    groups: dict[tuple, list[dict]] = {}
    for path in sorted(Path(directory).rglob("summary.json")):
        s = json.loads(path.read_text())
        key = (s.get("method"), s.get("strategy"), tuple(s.get("space_shape") or ()))
        groups.setdefault(key, []).append(s)
    rows = []
    for (method, strategy, shape), runs in groups.items():
        row = {"method": method, "strategy": strategy, "space_shape": "x".join(map(str, shape)), "trials": len(runs)}
        for field in ("final_recall", "best_score", "topk_mean", "molecules_acquired"):
            vals = [r[field] for r in runs if r.get(field) is not None]
            row[f"{field}_mean"] = float(np.mean(vals)) if vals else math.nan
            row[f"{field}_std"] = float(np.std(vals)) if vals else math.nan
        rows.append(row)
    return rows
