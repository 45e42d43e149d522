"""Acquisition scores for items and composition of unseen candidates."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import norm

from salsa.space import Candidate, ProductSpace
from salsa.surrogate import Predictions

STRATEGIES = ("ts", "ts-oneshot", "greedy", "eps-greedy", "ucb", "ei", "pi")

# elements per block of stochastic draws (bounds memory for very large pools)
_DRAW_BLOCK = 1 << 21


@dataclass
class AcquisitionStrategy:
    kind: str = "ts"
    epsilon: float = 0.05
    beta: float = 2.0
    y_best: float | None = None
    _oneshot: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def stochastic(self) -> bool:
        """True when every call draws fresh scores."""
        return self.kind == "ts"

    def begin_round(self) -> None:
        self._oneshot.clear()

    def score_items(self, predictions: Predictions, rng: np.random.Generator | None = None,
                    vector: int = 0) -> np.ndarray:
        return score_items(self, predictions, self.y_best, rng, vector)


def score_items(strategy: AcquisitionStrategy, predictions: Predictions, y_best: float | None = None,
                rng: np.random.Generator | None = None, vector: int = 0) -> np.ndarray:
    mean = np.asarray(predictions.mean, dtype=np.float64)
    std = np.asarray(predictions.std, dtype=np.float64)
    if len(mean) == 0:
        raise ValueError("no predictions to score")
    kind = strategy.kind
    if kind in ("greedy", "eps-greedy"):
        return mean.copy()
    if kind == "ucb":
        return mean + strategy.beta * std
    if kind == "ts":
        return rng.normal(mean, std)
    if kind == "ts-oneshot":
        if vector not in strategy._oneshot:
            strategy._oneshot[vector] = rng.normal(mean, std)
        return strategy._oneshot[vector].copy()
    if y_best is None:
        y_best = strategy.y_best
    if y_best is None:
        raise ValueError(f"{kind} needs the best score so far")
    improvement = mean - y_best
    safe = std > 0
    z = np.divide(improvement, std, out=np.zeros_like(mean), where=safe)
    if kind == "pi":
        step = np.where(improvement > 0, 1.0, np.where(improvement < 0, 0.0, 0.5))
        return np.where(safe, norm.cdf(z), step)
    # ei
    ei = improvement * norm.cdf(z) + std * norm.pdf(z)
    return np.where(safe, ei, np.maximum(improvement, 0.0))


def molecule_acquisition_score(per_vector_scores: Sequence[float]) -> float:
    return float(sum(per_vector_scores))


def _draw_choices(strategy: AcquisitionStrategy, preds: Predictions, rng: np.random.Generator,
                  n_attempts: int, vector: int) -> np.ndarray:
    """Item picked at ``vector`` in each of ``n_attempts`` independent attempts."""
    n_items = len(preds.mean)
    if strategy.stochastic:
        choices = np.empty(n_attempts, dtype=np.int64)
        rows = max(1, _DRAW_BLOCK // n_items)
        for start in range(0, n_attempts, rows):
            b = min(rows, n_attempts - start)
            draws = rng.standard_normal((b, n_items)) * preds.std + preds.mean
            choices[start : start + b] = np.argmax(draws, axis=1)
    else:
        scores = strategy.score_items(preds, rng, vector)
        choices = np.full(n_attempts, int(np.argmax(scores)), dtype=np.int64)
    if strategy.kind == "eps-greedy" and strategy.epsilon > 0:
        explore = rng.random(n_attempts) < strategy.epsilon
        choices[explore] = rng.integers(n_items, size=int(explore.sum()))
    return choices


class RoundSample(NamedTuple):
    candidates: list[Candidate]
    converged: bool
    attempts: int


def sample_round(strategy: AcquisitionStrategy, predictions: Sequence[Predictions], ledger,
                 K: int, rho_max: int, rngs: Sequence[np.random.Generator]) -> RoundSample:
    """Rejection composer: per attempt take each vector's argmax, keep the
    candidate only if it is unseen.

    Stops after ``K`` new candidates or ``rho_max`` attempts; hitting the
    attempt cap first is reported as convergence.
    """
    if K < 1 or rho_max < K:
        raise ValueError("need K >= 1 and rho_max >= K")
    strategy.begin_round()
    new: list[Candidate] = []
    seen_now: set[Candidate] = set()
    attempts = 0
    while len(new) < K and attempts < rho_max:
        block = min(K - len(new), rho_max - attempts)
        picks = [_draw_choices(strategy, p, rngs[v], block, v) for v, p in enumerate(predictions)]
        for row in zip(*picks):
            attempts += 1
            cand = Candidate(row)
            if cand not in ledger and cand not in seen_now:
                seen_now.add(cand)
                new.append(cand)
                if len(new) == K:
                    break
    return RoundSample(new, len(new) < K, attempts)


def select_ranked(strategy: AcquisitionStrategy, predictions: Sequence[Predictions], ledger,
                  K: int, rho_max: int, rngs: Sequence[np.random.Generator]) -> RoundSample:
    """Ranked composer for non-stochastic strategies.

    Walks the product space best-first by summed item scores (without
    enumerating it) and takes the top ``K`` unseen candidates. Under
    eps-greedy each slot of an attempt is swapped for a uniform random item
    with probability epsilon; swapped attempts do not consume the ranking.
    """
    if K < 1 or rho_max < K:
        raise ValueError("need K >= 1 and rho_max >= K")
    strategy.begin_round()
    n = len(predictions)
    scores = [strategy.score_items(p, rngs[v], v) for v, p in enumerate(predictions)]
    orders = [np.lexsort((np.arange(len(s)), -s)) for s in scores]
    sizes = [len(s) for s in scores]

    def entry(ranks, last):
        items = tuple(int(orders[v][r]) for v, r in enumerate(ranks))
        total = sum(float(scores[v][i]) for v, i in enumerate(items))
        return (-total, items, ranks, last)

    heap = [entry((0,) * n, 0)]
    new: list[Candidate] = []
    seen_now: set[Candidate] = set()
    attempts = 0
    eps = strategy.epsilon if strategy.kind == "eps-greedy" else 0.0
    while heap and len(new) < K and attempts < rho_max:
        _, items, ranks, last = heap[0]
        if eps > 0:
            swap = [rngs[v].random() < eps for v in range(n)]
            if any(swap):
                attempts += 1
                row = tuple(int(rngs[v].integers(sizes[v])) if swap[v] else items[v] for v in range(n))
                cand = Candidate(row)
                if cand not in ledger and cand not in seen_now:
                    seen_now.add(cand)
                    new.append(cand)
                continue
        heapq.heappop(heap)
        for j in range(last, n):
            if ranks[j] + 1 < sizes[j]:
                nxt = ranks[:j] + (ranks[j] + 1,) + ranks[j + 1 :]
                heapq.heappush(heap, entry(nxt, j))
        cand = Candidate(items)
        if cand in ledger or cand in seen_now:
            continue
        attempts += 1
        seen_now.add(cand)
        new.append(cand)
    return RoundSample(new, len(new) < K, attempts)


def acquire(strategy: AcquisitionStrategy, predictions, ledger, K, rho_max, rngs, composer: str = "auto"):
    """Dispatch to the rejection composer (stochastic TS) or the ranked one."""
    if composer == "auto":
        composer = "rejection" if strategy.stochastic else "ranked"
    if composer == "rejection":
        return sample_round(strategy, predictions, ledger, K, rho_max, rngs)
    if composer == "ranked":
        return select_ranked(strategy, predictions, ledger, K, rho_max, rngs)
    raise ValueError(f"unknown composer {composer!r}")


def estimate_acquisition_probability(strategy: AcquisitionStrategy, predictions: Sequence[Predictions],
                                     n_draws: int, rngs: Sequence[np.random.Generator]) -> list[np.ndarray]:
    """Monte-Carlo frequency with which each item is the pick at its vector."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    strategy.begin_round()
    out = []
    for v, p in enumerate(predictions):
        picks = _draw_choices(strategy, p, rngs[v], n_draws, v)
        out.append(np.bincount(picks, minlength=len(p.mean)) / n_draws)
    return out


def write_probabilities(path: str | Path, space: ProductSpace, probabilities: Sequence[np.ndarray]) -> None:
    with open(path, "w") as fh:
        fh.write("vector_index\titem_id\tprobability\n")
        for v, (s, probs) in enumerate(zip(space.sets, probabilities)):
            for item_id, prob in zip(s.item_ids, probs):
                fh.write(f"{v}\t{item_id}\t{float(prob)!r}\n")


def read_probabilities(path: str | Path) -> dict[int, dict[str, float]]:
    out: dict[int, dict[str, float]] = {}
    with open(path) as fh:
        next(fh)
        for line in fh:
            v, item_id, prob = line.rstrip("\n").split("\t")
            out.setdefault(int(v), {})[item_id] = float(prob)
    return out
