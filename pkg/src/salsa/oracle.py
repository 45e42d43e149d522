"""Objective functions, the deduplicated score ledger, and ground truth."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from salsa._rng import substream
from salsa.space import Candidate, ProductSpace


class OracleError(RuntimeError):
    pass


class BudgetExhausted(OracleError):
    pass


class DuplicateCandidate(OracleError):
    pass


class EnumerationTooLarge(OracleError):
    pass


def _as_index_array(candidates: Iterable[Candidate], n_vectors: int | None = None) -> np.ndarray:
    rows = [c.indices for c in candidates]
    if not rows:
        return np.zeros((0, n_vectors or 0), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


class Objective:
    """Expensive objective f: Candidate -> float.

    Subclasses implement :meth:`evaluate` on an ``(m, n_vectors)`` index
    array. :meth:`score_batch` is the metered entry point; ``calls`` counts
    every candidate it scores.
    """

    descriptor = "objective"

    def __init__(self):
        self.calls = 0

    def evaluate(self, index_rows: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score_batch(self, candidates: Sequence[Candidate]) -> list[float]:
        idx = _as_index_array(candidates)
        scores = np.asarray(self.evaluate(idx), dtype=np.float64) if len(idx) else np.zeros(0)
        self.calls += len(candidates)
        return [float(s) for s in scores]

    def __call__(self, candidate: Candidate) -> float:
        return self.score_batch([candidate])[0]


class AdditiveOracle(Objective):
    """f(s_0, ..., s_n) = sum of per-item utilities."""

    descriptor = "additive"

    def __init__(self, utilities: Sequence[Sequence[float]]):
        super().__init__()
        self.utilities = [np.asarray(u, dtype=np.float64) for u in utilities]

    def evaluate(self, index_rows):
        index_rows = np.asarray(index_rows, dtype=np.int64)
        total = np.zeros(len(index_rows))
        for v, u in enumerate(self.utilities):
            total += u[index_rows[:, v]]
        return total


class BilinearOracle(AdditiveOracle):
    """Additive utilities plus ``lam * x_v^T W x_{v+1}`` over consecutive vectors."""

    descriptor = "bilinear"

    def __init__(self, utilities, features: Sequence[np.ndarray], interaction: np.ndarray, lam: float):
        super().__init__(utilities)
        self.features = [np.asarray(f, dtype=np.float64) for f in features]
        self.interaction = np.asarray(interaction, dtype=np.float64)
        d = self.features[0].shape[1]
        if self.interaction.shape != (d, d):
            raise ValueError(f"interaction matrix must be {d}x{d}")
        self.lam = float(lam)
        # x_v W is reused for every pairing, so precompute it once
        self._left = [f @ self.interaction for f in self.features[:-1]]

    def evaluate(self, index_rows):
        index_rows = np.asarray(index_rows, dtype=np.int64)
        total = super().evaluate(index_rows)
        if self.lam != 0.0:
            for v in range(len(self.features) - 1):
                left = self._left[v][index_rows[:, v]]
                right = self.features[v + 1][index_rows[:, v + 1]]
                total += self.lam * np.einsum("ij,ij->i", left, right)
        return total


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def _id_hashes(item_ids: Sequence[str]) -> np.ndarray:
    import hashlib

    return np.array(
        [int.from_bytes(hashlib.blake2b(i.encode(), digest_size=8).digest(), "little") for i in item_ids],
        dtype=np.uint64,
    )


class NoisyAdditiveOracle(AdditiveOracle):
    """Additive oracle plus Gaussian noise that is a fixed function of
    (item identities, seed), so the same candidate always gets the same draw."""

    descriptor = "noisy-additive"

    def __init__(self, utilities, item_ids: Sequence[Sequence[str]], noise_std: float, seed: int):
        super().__init__(utilities)
        if noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        self.noise_std = float(noise_std)
        self.seed = int(seed)
        self._hashes = [_id_hashes(ids) for ids in item_ids]

    def noise(self, index_rows) -> np.ndarray:
        index_rows = np.asarray(index_rows, dtype=np.int64)
        with np.errstate(over="ignore"):
            h = np.full(len(index_rows), np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
            for v, hv in enumerate(self._hashes):
                h = _splitmix64(h ^ hv[index_rows[:, v]])
            a = _splitmix64(h)
            b = _splitmix64(a)
        u1 = ((a >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53
        u2 = (b >> np.uint64(11)).astype(np.float64) / 2.0**53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def evaluate(self, index_rows):
        base = super().evaluate(index_rows)
        if self.noise_std == 0.0:
            return base
        return base + self.noise_std * self.noise(index_rows)


@dataclass
class SyntheticOracleSpec:
    kind: str = "additive"  # additive | bilinear | noisy-additive
    lam: float = 0.3
    noise_std: float = 0.0
    seed: int = 0
    weights: list[list[float]] | None = None

    def __post_init__(self):
        if self.kind not in ("additive", "bilinear", "noisy-additive"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def make_oracle(spec: SyntheticOracleSpec, space: ProductSpace) -> Objective:
    """Synthetic oracle whose item utilities are linear in item features.

    Utilities depend only on features, so a subsampled space sees the same
    per-item values as the full space.
    """
    d = space.dim
    if spec.weights is not None:
        weights = [np.asarray(w, dtype=np.float64) for w in spec.weights]
        if len(weights) != space.n_vectors or any(w.shape != (d,) for w in weights):
            raise ValueError(f"weights must be {space.n_vectors} vectors of length {d}")
    else:
        weights = [substream(spec.seed, "oracle-weights", v).standard_normal(d) for v in range(space.n_vectors)]
    utilities = [s.features @ w for s, w in zip(space.sets, weights)]
    if spec.kind == "additive":
        return AdditiveOracle(utilities)
    if spec.kind == "noisy-additive":
        return NoisyAdditiveOracle(utilities, [s.item_ids for s in space.sets], spec.noise_std, spec.seed)
    interaction = substream(spec.seed, "oracle-interaction").standard_normal((d, d)) / math.sqrt(d)
    return BilinearOracle(utilities, [s.features for s in space.sets], interaction, spec.lam)


@dataclass
class MpoComponent:
    objective: Objective
    weight: float = 1.0
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("MPO weights must be > 0")
        if not self.hi > self.lo:
            raise ValueError("MPO scale needs hi > lo")


class MpoObjective(Objective):
    """Weighted sum of components, each affinely mapped to [0, 1] and clamped."""

    descriptor = "mpo"

    def __init__(self, components: Sequence[MpoComponent]):
        super().__init__()
        if not components:
            raise ValueError("MPO needs at least one component")
        self.components = list(components)

    def evaluate(self, index_rows):
        total = np.zeros(len(index_rows))
        for c in self.components:
            raw = np.asarray(c.objective.evaluate(index_rows), dtype=np.float64)
            total += c.weight * np.clip((raw - c.lo) / (c.hi - c.lo), 0.0, 1.0)
        return total


def mpo_score(components: Sequence[MpoComponent] | MpoObjective, candidate: Candidate) -> float:
    mpo = components if isinstance(components, MpoObjective) else MpoObjective(components)
    return float(mpo.evaluate(np.asarray([candidate.indices], dtype=np.int64))[0])


@dataclass
class ScoreLedger:
    """Deduplicated record of scored candidates.

    ``total_calls`` counts budgeted scorings only; warm-up observations are
    recorded with ``budgeted=False`` and land in ``unbudgeted_calls``.
    """

    budget: int | None = None
    scores: dict[Candidate, float] = field(default_factory=dict)
    rounds: dict[Candidate, int] = field(default_factory=dict)
    total_calls: int = 0
    unbudgeted_calls: int = 0

    def __contains__(self, candidate) -> bool:
        return candidate in self.scores

    def __len__(self) -> int:
        return len(self.scores)

    def __iter__(self):
        return iter(self.scores)

    def items(self):
        return self.scores.items()

    def get(self, candidate: Candidate) -> float:
        return self.scores[candidate]

    @property
    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.total_calls

    def best(self) -> float:
        return max(self.scores.values()) if self.scores else -math.inf

    def record(self, candidates: Sequence[Candidate], scores: Sequence[float], round_index: int = 0,
               budgeted: bool = True) -> None:
        self.check_new(candidates, budgeted)
        for c, s in zip(candidates, scores):
            self.scores[c] = float(s)
            self.rounds[c] = round_index
        if budgeted:
            self.total_calls += len(candidates)
        else:
            self.unbudgeted_calls += len(candidates)

    def check_new(self, candidates: Sequence[Candidate], budgeted: bool = True) -> None:
        seen = set()
        for c in candidates:
            if c in self.scores:
                raise DuplicateCandidate(f"{c.indices} already scored")
            if c in seen:
                raise DuplicateCandidate(f"{c.indices} repeated within batch")
            seen.add(c)
        if budgeted and self.budget is not None and self.total_calls + len(candidates) > self.budget:
            raise BudgetExhausted(
                f"batch of {len(candidates)} exceeds remaining budget {self.budget - self.total_calls}"
            )

    def top_k(self, k: int) -> list[tuple[Candidate, float]]:
        return heapq.nsmallest(k, self.scores.items(), key=lambda kv: (-kv[1], kv[0].indices))

    def to_rows(self) -> list[list]:
        return [[list(c.indices), s, self.rounds[c]] for c, s in self.scores.items()]


def score_batch(ledger: ScoreLedger, objective: Objective, candidates: Sequence[Candidate],
                round_index: int = 0, budgeted: bool = True) -> list[tuple[Candidate, float]]:
    """Score unseen candidates once and record them; order follows the input."""
    candidates = list(candidates)
    ledger.check_new(candidates, budgeted)
    scores = objective.score_batch(candidates)
    if len(scores) != len(candidates):
        raise OracleError(f"objective returned {len(scores)} scores for {len(candidates)} candidates")
    if not all(math.isfinite(s) for s in scores):
        raise OracleError("objective returned a non-finite score")
    ledger.record(candidates, scores, round_index, budgeted)
    return list(zip(candidates, scores))


DEFAULT_ENUMERATION_CAP = 2_000_000


def brute_force_ground_truth(space: ProductSpace, objective: Objective, k: int,
                             cap: int = DEFAULT_ENUMERATION_CAP, chunk: int = 1 << 18
                             ) -> list[tuple[Candidate, float]]:
    """Exact top-k by exhaustive enumeration, highest first.

    Ties go to the lexicographically smaller index tuple. Uses
    ``objective.evaluate`` directly, so no budget or call counter is touched.
    """
    if space.astronomical or space.size > cap:
        raise EnumerationTooLarge(f"space of size {space.size} exceeds enumeration cap {cap}")
    k = min(k, space.size)
    best_flat = np.zeros(0, dtype=np.int64)
    best_score = np.zeros(0)
    for start in range(0, space.size, chunk):
        flat = np.arange(start, min(start + chunk, space.size), dtype=np.int64)
        idx = np.stack(np.unravel_index(flat, space.shape), axis=1)
        scores = np.asarray(objective.evaluate(idx), dtype=np.float64)
        all_flat = np.concatenate([best_flat, flat])
        all_score = np.concatenate([best_score, scores])
        # row-major flat order is lexicographic order of index tuples
        order = np.lexsort((all_flat, -all_score))[:k]
        best_flat, best_score = all_flat[order], all_score[order]
    return [(space.from_flat(f), float(s)) for f, s in zip(best_flat, best_score)]
