"""Item pools per vector, the implied product space, and candidate identity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from salsa._rng import substream


class SpaceError(ValueError):
    """Invalid pool, space, or candidate."""


@dataclass(frozen=True, eq=False)
class SynthonSet:
    """Ordered pool of items available at one vector.

    ``features`` is an ``(n_items, d)`` float array; row ``i`` belongs to
    ``item_ids[i]``.
    """

    vector_index: int
    item_ids: tuple[str, ...]
    features: np.ndarray

    def __post_init__(self):
        if self.vector_index < 0:
            raise SpaceError("vector_index must be >= 0")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise SpaceError("features must be a 2-D array (n_items, d)")
        if len(self.item_ids) == 0 or feats.shape[0] == 0:
            raise SpaceError(f"synthon set for vector {self.vector_index} is empty")
        if feats.shape[0] != len(self.item_ids):
            raise SpaceError("item_ids and features disagree on pool size")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise SpaceError(f"duplicate item_id in vector {self.vector_index}")
        feats.setflags(write=False)
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_items(cls, vector_index: int, items: Iterable[tuple[str, Sequence[float]]]) -> "SynthonSet":
        items = list(items)
        if not items:
            raise SpaceError(f"synthon set for vector {vector_index} is empty")
        dims = {len(f) for _, f in items}
        if len(dims) != 1:
            raise SpaceError(f"inconsistent feature dimensions in vector {vector_index}: {sorted(dims)}")
        ids = [i for i, _ in items]
        return cls(vector_index, tuple(ids), np.array([f for _, f in items], dtype=np.float64))


@dataclass(frozen=True, order=True)
class Candidate:
    """One member of the product space, as per-vector positional indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, i: int) -> int:
        return self.indices[i]


@dataclass(frozen=True, eq=False)
class ProductSpace:
    sets: tuple[SynthonSet, ...]
    size: int = field(init=False)
    astronomical: bool = field(init=False)

    # sizes above this are flagged rather than treated as ordinary integers
    MAX_EXACT = 2**63 - 1

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))
        total = math.prod(len(s) for s in self.sets)
        object.__setattr__(self, "size", total)
        object.__setattr__(self, "astronomical", total > self.MAX_EXACT)

    @property
    def n_vectors(self) -> int:
        return len(self.sets)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sets)

    @property
    def pool_total(self) -> int:
        """Sum of pool sizes: the number of per-item model evaluations."""
        return sum(len(s) for s in self.sets)

    @property
    def dim(self) -> int:
        return self.sets[0].dim

    def __len__(self) -> int:
        return self.size

    def compose(self, indices: Sequence[int]) -> Candidate:
        if len(indices) != self.n_vectors:
            raise SpaceError(f"expected {self.n_vectors} indices, got {len(indices)}")
        for i, (idx, s) in enumerate(zip(indices, self.sets)):
            if not 0 <= int(idx) < len(s):
                raise SpaceError(f"index {idx} out of range for vector {i} of size {len(s)}")
        return Candidate(tuple(indices))

    def decompose(self, candidate: Candidate) -> tuple[tuple[int, str, np.ndarray], ...]:
        """Per-vector ``(index, item_id, features)`` for a candidate."""
        self.compose(candidate.indices)
        return tuple(
            (idx, s.item_ids[idx], s.features[idx]) for idx, s in zip(candidate.indices, self.sets)
        )

    def item_key(self, candidate: Candidate) -> tuple[str, ...]:
        """Run-independent identity of a candidate (item_id per vector)."""
        return tuple(s.item_ids[i] for i, s in zip(candidate.indices, self.sets))

    def candidate_from_key(self, key: Sequence[str]) -> Candidate:
        lookup = self._id_lookup()
        try:
            return Candidate(tuple(lookup[v][k] for v, k in enumerate(key)))
        except KeyError as exc:
            raise SpaceError(f"unknown item_id {exc.args[0]!r}") from None

    def _id_lookup(self) -> list[dict[str, int]]:
        cached = self.__dict__.get("_lookup")
        if cached is None:
            cached = [{k: i for i, k in enumerate(s.item_ids)} for s in self.sets]
            object.__setattr__(self, "_lookup", cached)
        return cached

    def flat_index(self, candidate: Candidate) -> int:
        return int(np.ravel_multi_index(candidate.indices, self.shape))

    def from_flat(self, flat: int) -> Candidate:
        return Candidate(tuple(int(i) for i in np.unravel_index(int(flat), self.shape)))

    def features_of(self, index_rows: np.ndarray) -> np.ndarray:
        """Concatenated per-vector features for an ``(m, n_vectors)`` index array."""
        index_rows = np.asarray(index_rows, dtype=np.int64).reshape(-1, self.n_vectors)
        return np.hstack([s.features[index_rows[:, v]] for v, s in enumerate(self.sets)])


def build_space(sets: Sequence[SynthonSet]) -> ProductSpace:
    sets = list(sets)
    if len(sets) < 2:
        raise SpaceError("a product space needs at least 2 synthon sets")
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise SpaceError(f"inconsistent feature dimensions across vectors: {sorted(dims)}")
    for pos, s in enumerate(sets):
        if s.vector_index != pos:
            raise SpaceError(f"set at position {pos} carries vector_index {s.vector_index}")
    return ProductSpace(tuple(sets))


def generate_set(vector_index: int, n_items: int, dim: int = 16, seed: int = 0) -> SynthonSet:
    """Synthetic pool with iid uniform(0, 1) features."""
    if n_items < 1:
        raise SpaceError("n_items must be >= 1")
    rng = substream(seed, "space", vector_index)
    feats = rng.random((n_items, dim))
    width = len(str(n_items - 1))
    ids = tuple(f"v{vector_index}_{i:0{width}d}" for i in range(n_items))
    return SynthonSet(vector_index, ids, feats)


def generate_space(sizes: Sequence[int], dim: int = 16, seed: int = 0) -> ProductSpace:
    return build_space([generate_set(v, n, dim, seed) for v, n in enumerate(sizes)])


def subsample(space: ProductSpace, per_vector_counts: Sequence[int], seed: int) -> ProductSpace:
    """Draw ``counts[i]`` items from each pool without replacement.

    Selected items keep their original relative order and item_ids.
    """
    if len(per_vector_counts) != space.n_vectors:
        raise SpaceError("one count per vector is required")
    new_sets = []
    for v, (s, count) in enumerate(zip(space.sets, per_vector_counts)):
        if not 1 <= count <= len(s):
            raise SpaceError(f"cannot subsample {count} items from vector {v} of size {len(s)}")
        rng = substream(seed, "subsample", v)
        picked = np.sort(rng.choice(len(s), size=count, replace=False))
        new_sets.append(SynthonSet(v, tuple(s.item_ids[i] for i in picked), s.features[picked]))
    return build_space(new_sets)


def write_set(synthons: SynthonSet, path: str | Path) -> None:
    """One item per line: item_id followed by its features, whitespace separated."""
    with open(path, "w") as fh:
        for item_id, row in zip(synthons.item_ids, synthons.features):
            fh.write(item_id + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_set(path: str | Path, vector_index: int) -> SynthonSet:
    items = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                items.append((parts[0], [float(x) for x in parts[1:]]))
            except ValueError:
                raise SpaceError(f"{path}:{lineno}: non-numeric feature") from None
    return SynthonSet.from_items(vector_index, items)


def write_space(space: ProductSpace, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in space.sets:
        p = directory / f"vector_{s.vector_index}.txt"
        write_set(s, p)
        paths.append(p)
    return paths


def read_space(directory: str | Path) -> ProductSpace:
    directory = Path(directory)
    paths = sorted(directory.glob("vector_*.txt"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise SpaceError(f"no vector_*.txt files under {directory}")
    return build_space([read_set(p, v) for v, p in enumerate(paths)])
