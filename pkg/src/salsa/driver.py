"""The active-learning loop over a factored product space, and baselines.

All four methods share one round structure: score whatever was acquired
last round, then (unless this is the final round) acquire the next batch.
Every run is a pure function of its config and seed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from salsa import metrics
from salsa._rng import substream
from salsa.acquisition import AcquisitionStrategy, acquire, estimate_acquisition_probability, sample_round
from salsa.config import RunConfig, config_to_dict, dump_config
from salsa.external import ExternalScorer
from salsa.oracle import (
    MpoComponent,
    MpoObjective,
    Objective,
    OracleError,
    ScoreLedger,
    SyntheticOracleSpec,
    brute_force_ground_truth,
    make_oracle,
    score_batch,
)
from salsa.space import Candidate, ProductSpace, generate_space, read_space, subsample
from salsa.surrogate import MveRegressor, SynthonDataset, SynthonSurrogate, TabularGaussianModel

log = logging.getLogger(__name__)

# fields that legitimately differ between otherwise identical runs
VOLATILE_FIELDS = ("timing", "checkpoint")


class RunAborted(RuntimeError):
    """Objective failure mid-run; records up to the failure were persisted."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


@dataclass
class RunResult:
    records: list[dict]
    ledger: ScoreLedger
    space: ProductSpace
    truth: list | None = None
    out_dir: Path | None = None
    extras: dict = field(default_factory=dict)

    @property
    def final_recall(self) -> float | None:
        return self.records[-1]["recall"] if self.records else None


# --- construction from config -------------------------------------------------


def build_space_from_config(config: RunConfig) -> ProductSpace:
    sc = config.space
    space = read_space(sc.path) if sc.path else generate_space(sc.sizes, sc.dim, sc.seed)
    if sc.subsample:
        space = subsample(space, sc.subsample, sc.subsample_seed)
    return space


def build_objective(config: RunConfig, space: ProductSpace) -> Objective:
    oc = config.objective
    if oc.kind == "external":
        return ExternalScorer(space, oc.scorer_cmd, timeout=oc.scorer_timeout, workers=oc.scorer_workers)
    if oc.kind == "mpo":
        comps = []
        for i, c in enumerate(oc.components):
            sub = make_oracle(SyntheticOracleSpec(c.kind, c.lam, c.noise_std, c.seed), space)
            comps.append(MpoComponent(sub, c.weight, c.lo, c.hi))
        return MpoObjective(comps)
    return make_oracle(SyntheticOracleSpec(oc.kind, oc.lam, oc.noise_std, oc.seed), space)


def ground_truth_for(config: RunConfig, space: ProductSpace, objective: Objective):
    if config.recall_k <= 0 or space.astronomical or space.size > config.enumeration_cap:
        return None
    if isinstance(objective, ExternalScorer):
        return None
    return brute_force_ground_truth(space, objective, config.recall_k, cap=config.enumeration_cap)


# --- shared round machinery ---------------------------------------------------


def initial_sample(space: ProductSpace, K: int, seed: int, ledger: ScoreLedger | None = None) -> list[Candidate]:
    """Zip of independent per-vector shuffles, repeated until K unseen candidates.

    Falls back to the whole space when K covers it.
    """
    if not space.astronomical and K >= space.size:
        out = [space.from_flat(f) for f in range(space.size)]
        return [c for c in out if ledger is None or c not in ledger]
    chosen: list[Candidate] = []
    seen: set[Candidate] = set()
    n_pass = 0
    while len(chosen) < K:
        perms = [substream(seed, "initial", n_pass, v).permutation(len(s)) for v, s in enumerate(space.sets)]
        n_pass += 1
        for row in zip(*perms):
            c = Candidate(row)
            if c in seen or (ledger is not None and c in ledger):
                continue
            seen.add(c)
            chosen.append(c)
            if len(chosen) == K:
                break
        if n_pass > 10_000:
            break
    return chosen


class _Run:
    """Bookkeeping shared by every method: ledger, records, files, checkpoints."""

    def __init__(self, config: RunConfig, out_dir, space, objective, truth):
        self.config = config
        self.space = space if space is not None else build_space_from_config(config)
        self.objective = objective if objective is not None else build_objective(config, self.space)
        self.truth = truth if truth is not None else ground_truth_for(config, self.space, self.objective)
        self.truth_keys = [self.space.item_key(c) for c, _ in self.truth] if self.truth else None
        self.ledger = ScoreLedger(budget=config.budget)
        self.records: list[dict] = []
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            dump_config(config, self.out_dir / "config.resolved.yaml")
            (self.out_dir / "records.jsonl").write_text("")

    def score(self, candidates, round_index, budgeted=True):
        try:
            return score_batch(self.ledger, self.objective, candidates, round_index, budgeted)
        except OracleError as exc:
            self.finish()
            raise RunAborted(f"round {round_index}: {exc}", self.records) from exc

    def recall(self):
        if self.truth_keys is None:
            return None
        return metrics.recall_at_k((self.space.item_key(c) for c in self.ledger), self.truth_keys)

    def record(self, round_index, scored, timing, converged=False, snapshot=None, **extra) -> dict:
        """Append a round record; ``snapshot=(pending, stopped, model)`` also checkpoints it."""
        prev_best = self.records[-1]["best_so_far"] if self.records else -float("inf")
        best = max(prev_best, max((s for _, s in scored), default=-float("inf")))
        rec = {
            "round": round_index,
            "acquired": [[list(c.indices), list(self.space.item_key(c)), s] for c, s in scored],
            "n_acquired": len(scored),
            "cumulative_acquired": self.ledger.total_calls,
            "ledger_size": len(self.ledger),
            "best_so_far": best,
            "recall": self.recall(),
            "converged": bool(converged),
            "timing": timing,
        }
        rec.update(extra)
        rec["checkpoint"] = self._checkpoint_path(round_index) if snapshot is not None else None
        self.records.append(rec)
        if snapshot is not None:
            self.checkpoint(round_index, *snapshot)
        if self.out_dir is not None:
            with open(self.out_dir / "records.jsonl", "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        return rec

    def _checkpoint_path(self, round_index) -> str | None:
        if self.out_dir is None or not self.config.checkpoint:
            return None
        return str(self.out_dir / "checkpoints" / f"round_{round_index:03d}.json")

    def checkpoint(self, round_index, pending, stopped, model=None) -> str | None:
        path = self._checkpoint_path(round_index)
        if path is None:
            return None
        path = Path(path)
        ck_dir = path.parent
        ck_dir.mkdir(exist_ok=True)
        model_path = None
        if model is not None:
            model_path = ck_dir / f"model_round_{round_index:03d}.npz"
            model.save(model_path)
        state = {
            "round": round_index,
            "ledger": [[list(c.indices), s, self.ledger.rounds[c]] for c, s in self.ledger.items()],
            "total_calls": self.ledger.total_calls,
            "unbudgeted_calls": self.ledger.unbudgeted_calls,
            "pending": [list(c.indices) for c in pending],
            "stopped": stopped,
            "records": self.records,
            "model": str(model_path) if model_path else None,
        }
        path.write_text(json.dumps(state))
        return str(path)

    def restore(self, path) -> tuple[int, list[Candidate], bool]:
        state = json.loads(Path(path).read_text())
        for idx, s, r in state["ledger"]:
            c = Candidate(tuple(idx))
            self.ledger.scores[c] = s
            self.ledger.rounds[c] = r
        self.ledger.total_calls = state["total_calls"]
        self.ledger.unbudgeted_calls = state["unbudgeted_calls"]
        self.records = state["records"]
        if self.out_dir is not None:
            with open(self.out_dir / "records.jsonl", "w") as fh:
                for rec in self.records:
                    fh.write(json.dumps(rec) + "\n")
        return state["round"] + 1, [Candidate(tuple(p)) for p in state["pending"]], state["stopped"]

    def finish(self, extras: dict | None = None) -> RunResult:
        if self.out_dir is not None:
            metrics.write_recall_curve(self.out_dir / "recall_curve.tsv", self.records)
            metrics.write_timing(self.out_dir / "timing.tsv", self.records)
            rows, final = metrics.topk_distribution(self.ledger, self.config.recall_k or 100)
            metrics.write_topk(self.out_dir / "topk_by_round.tsv", rows)
            metrics.write_final_topk(self.out_dir / "final_topk.tsv", final, self.space)
            cfg = config_to_dict(self.config)
            cfg["_space_shape"] = list(self.space.shape)
            summary = metrics.run_summary(self.records, self.ledger, cfg, self.config.recall_k or 100)
            (self.out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
        return RunResult(self.records, self.ledger, self.space, self.truth, self.out_dir, extras or {})


def _timer():
    t = time.perf_counter()
    return lambda: time.perf_counter() - t


def _strategy(config: RunConfig) -> AcquisitionStrategy:
    sc = config.strategy
    return AcquisitionStrategy(kind=sc.kind, epsilon=sc.epsilon, beta=sc.beta)


# --- SALSA ------------------------------------------------------------------


def run_salsa(config: RunConfig, out_dir=None, space=None, objective=None, truth=None,
              resume_from=None, on_round: Callable[[dict], None] | None = None) -> RunResult:
    """Factored active learning: train per-item models, compose candidates from item picks."""
    run = _Run(config, out_dir, space, objective, truth)
    space, K, N = run.space, config.batch_size, config.n_rounds
    strategy = _strategy(config)
    start, pending, stopped = 1, None, False
    if resume_from is not None:
        start, pending, stopped = run.restore(resume_from)
    else:
        pending = initial_sample(space, K, config.seed)

    for n in range(start, N + 1):
        if not pending and n > 1:
            break
        timing = {p: 0.0 for p in metrics.PHASES}
        clock = _timer()
        scored = run.score(pending, n)
        timing["scoring"] = clock()
        pending, converged, attempts, passes, model = [], False, 0, 0, None
        if n < N and not stopped:
            clock = _timer()
            model = SynthonSurrogate(config.surrogate)
            dataset = SynthonDataset.from_ledger(run.ledger, space.n_vectors)
            reports = model.fit(space, dataset, seed=int(substream(config.seed, "train", n).integers(2**31)))
            timing["training"] = clock()

            clock = _timer()
            preds = model.predict_all(space, seed=int(substream(config.seed, "predict", n).integers(2**31)))
            passes = model.forward_passes
            timing["inference"] = clock()

            clock = _timer()
            strategy.y_best = run.ledger.best()
            rngs = [substream(config.seed, "acquire", n, v) for v in range(space.n_vectors)]
            sample = acquire(strategy, preds, run.ledger, K, config.attempts_cap, rngs, config.strategy.composer)
            pending, converged, attempts = sample.candidates, sample.converged, sample.attempts
            stopped = converged
            timing["acquisition"] = clock()

            if config.heatmap_draws > 0 and run.out_dir is not None:
                prngs = [substream(config.seed, "heatmap", n, v) for v in range(space.n_vectors)]
                probs = estimate_acquisition_probability(strategy, preds, config.heatmap_draws, prngs)
                metrics.heatmap_export(run.out_dir / "heatmaps", space, probs, run.truth or [], n)
            training = [{"stopped_epoch": r.stopped_epoch, "best_epoch": r.best_epoch,
                         "final_train_loss": r.train_loss[-1], "best_val_loss": min(r.val_loss)}
                        for r in reports]
        else:
            training = []
        rec = run.record(n, scored, timing, converged, snapshot=(pending, stopped, model), attempts=attempts,
                         forward_passes=passes, training=training)
        if on_round is not None:
            on_round(rec)
        if stopped and not pending:
            break
    return run.finish()


# --- baselines ------------------------------------------------------------------


def run_random_baseline(config: RunConfig, out_dir=None, space=None, objective=None, truth=None) -> RunResult:
    """Uniform sampling without replacement from the product space, same budget."""
    run = _Run(config, out_dir, space, objective, truth)
    space, K = run.space, config.batch_size
    total = min(config.budget, space.size) if not space.astronomical else config.budget
    rng = substream(config.seed, "random-baseline")
    if space.astronomical:
        picks = initial_sample(space, total, config.seed)
    else:
        flat = rng.choice(space.size, size=total, replace=False)
        picks = [space.from_flat(f) for f in flat]
    for n in range(1, config.n_rounds + 1):
        batch = picks[(n - 1) * K : n * K]
        if not batch:
            break
        clock = _timer()
        scored = run.score(batch, n)
        timing = {p: 0.0 for p in metrics.PHASES}
        timing["scoring"] = clock()
        run.record(n, scored, timing, snapshot=([], False, None))
    return run.finish()


def run_tabular_ts(config: RunConfig, out_dir=None, space=None, objective=None, truth=None,
                   warmup_trials: int | None = None) -> RunResult:
    """Thompson sampling over independent per-item normal posteriors.

    Every item is first observed ``warmup_trials`` times next to random
    complements; those scorings are ledgered but not charged to the budget.
    """
    warmup_trials = config.warmup_trials if warmup_trials is None else warmup_trials
    if warmup_trials < 1:
        raise ValueError("warmup_trials must be >= 1")
    run = _Run(config, out_dir, space, objective, truth)
    space, K = run.space, config.batch_size
    if space.astronomical or warmup_trials * space.pool_total > space.size:
        raise ValueError(
            f"{warmup_trials} warm-up trials for {space.pool_total} items exceed the space of {space.size}"
        )

    clock = _timer()
    warm: list[Candidate] = []
    taken: set[Candidate] = set()
    rng = substream(config.seed, "warmup")
    for v, s in enumerate(space.sets):
        for item in range(len(s)):
            for _ in range(warmup_trials):
                for _attempt in range(1000):
                    row = [int(rng.integers(len(o))) for o in space.sets]
                    row[v] = item
                    c = Candidate(tuple(row))
                    if c not in taken:
                        taken.add(c)
                        warm.append(c)
                        break
    scored = run.score(warm, 0, budgeted=False)
    ys = np.array([y for _, y in scored])
    prior_mean = float(ys.mean())
    spread = float(ys.var()) if len(ys) > 1 and ys.var() > 0 else 1.0
    obs_var = config.tabular_obs_var if config.tabular_obs_var is not None else spread
    models = [TabularGaussianModel(len(s), prior_mean, spread, obs_var) for s in space.sets]
    for c, y in scored:
        for v, i in enumerate(c.indices):
            models[v].update(i, y)
    timing = {p: 0.0 for p in metrics.PHASES}
    timing["scoring"] = clock()
    run.record(0, scored, timing, warmup=True)

    strategy = AcquisitionStrategy(kind="ts")
    for n in range(1, config.n_rounds + 1):
        timing = {p: 0.0 for p in metrics.PHASES}
        clock = _timer()
        preds = [m.predict() for m in models]
        rngs = [substream(config.seed, "acquire", n, v) for v in range(space.n_vectors)]
        sample = sample_round(strategy, preds, run.ledger, K, config.attempts_cap, rngs)
        timing["acquisition"] = clock()
        clock = _timer()
        scored = run.score(sample.candidates, n)
        timing["scoring"] = clock()
        clock = _timer()
        for c, y in scored:
            for v, i in enumerate(c.indices):
                models[v].update(i, y)
        timing["training"] = clock()
        run.record(n, scored, timing, sample.converged, snapshot=([], sample.converged, None),
                   attempts=sample.attempts)
        if sample.converged:
            break
    return run.finish(extras={"models": models})


def run_pool_al(config: RunConfig, out_dir=None, space=None, objective=None, truth=None) -> RunResult:
    """Full-molecule pool-based active learning: one model over concatenated
    item features, greedy top-K among every unseen candidate."""
    run = _Run(config, out_dir, space, objective, truth)
    space, K, N = run.space, config.batch_size, config.n_rounds
    if space.astronomical or space.size > config.enumeration_cap:
        raise ValueError(f"space of size {space.size} exceeds enumeration cap {config.enumeration_cap}")
    all_rows = np.stack(np.unravel_index(np.arange(space.size), space.shape), axis=1)
    X_all = space.features_of(all_rows)
    pending = initial_sample(space, K, config.seed)
    for n in range(1, N + 1):
        if not pending:
            break
        timing = {p: 0.0 for p in metrics.PHASES}
        clock = _timer()
        scored = run.score(pending, n)
        timing["scoring"] = clock()
        pending, passes = [], 0
        if n < N:
            clock = _timer()
            flat_seen = np.array([space.flat_index(c) for c in run.ledger], dtype=np.int64)
            y_seen = np.array([run.ledger.scores[c] for c in run.ledger])
            model = MveRegressor(config.surrogate.regressor)
            model.fit(X_all[flat_seen], y_seen, seed=int(substream(config.seed, "train", n).integers(2**31)))
            timing["training"] = clock()

            clock = _timer()
            unseen = np.ones(space.size, dtype=bool)
            unseen[flat_seen] = False
            unseen_flat = np.flatnonzero(unseen)
            preds = model.predict(X_all[unseen_flat])
            passes = model.forward_passes
            timing["inference"] = clock()

            clock = _timer()
            order = np.lexsort((unseen_flat, -preds.mean))[:K]
            pending = [space.from_flat(f) for f in unseen_flat[order]]
            timing["acquisition"] = clock()
        run.record(n, scored, timing, snapshot=(pending, False, None), forward_passes=passes)
    return run.finish()


RUNNERS = {
    "salsa": run_salsa,
    "random": run_random_baseline,
    "tabular-ts": run_tabular_ts,
    "pool-al": run_pool_al,
}


def run(config: RunConfig, out_dir=None, **kwargs) -> RunResult:
    return RUNNERS[config.method](config, out_dir=out_dir, **kwargs)


def strip_volatile(records: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k not in VOLATILE_FIELDS} for r in records]
