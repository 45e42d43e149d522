import itertools
import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from salsa.space import (
    Candidate,
    ProductSpace,
    SpaceError,
    SynthonSet,
    build_space,
    generate_set,
    generate_space,
    read_set,
    read_space,
    subsample,
    write_set,
    write_space,
)
from conftest import make_set


class _SizedSet:
    """Stand-in pool exposing only a length, so size arithmetic can be checked
    at real scale without allocating millions of feature rows."""

    def __init__(self, n):
        self.n = n

    def __len__(self):
        return self.n


def test_paper_scale_sizes_without_enumeration():
    space = ProductSpace((_SizedSet(910_000), _SizedSet(2_400_000)))
    assert space.size == 2_184_000_000_000
    assert space.pool_total == 3_310_000
    assert not space.astronomical


def test_astronomical_flag_instead_of_wrapping():
    space = ProductSpace(tuple(_SizedSet(10**7) for _ in range(3)))
    assert space.size == 10**21
    assert space.astronomical


def test_singletons_and_1k_squared():
    assert build_space([make_set(0, 1), make_set(1, 1)]).size == 1
    assert generate_space([1000, 1000], dim=2).size == 1_000_000


@pytest.mark.parametrize(
    "sets, match",
    [
        ([], "at least 2"),
        ([make_set(0, 3)], "at least 2"),
        ([make_set(0, 3, d=2), make_set(1, 3, d=3)], "inconsistent"),
    ],
)
def test_build_space_errors(sets, match):
    with pytest.raises(SpaceError, match=match):
        build_space(sets)


def test_synthon_set_invariants():
    with pytest.raises(SpaceError, match="empty"):
        SynthonSet(0, (), np.zeros((0, 2)))
    with pytest.raises(SpaceError, match="duplicate"):
        SynthonSet(0, ("a", "a"), np.zeros((2, 2)))
    with pytest.raises(SpaceError, match="inconsistent"):
        SynthonSet.from_items(0, [("a", [1.0, 2.0]), ("b", [1.0])])


def test_subsample_to_1m():
    space = generate_space([1500, 1200], dim=2, seed=1)
    sub = subsample(space, [1000, 1000], seed=5)
    assert sub.size == 1_000_000
    assert set(sub.sets[0].item_ids) <= set(space.sets[0].item_ids)


def test_subsample_identity_and_determinism(space_10x10):
    same = subsample(space_10x10, [10, 10], seed=9)
    for a, b in zip(same.sets, space_10x10.sets):
        assert sorted(a.item_ids) == sorted(b.item_ids)
    s1 = subsample(space_10x10, [4, 6], seed=2)
    s2 = subsample(space_10x10, [4, 6], seed=2)
    assert [s.item_ids for s in s1.sets] == [s.item_ids for s in s2.sets]
    ids = dict(zip(space_10x10.sets[1].item_ids, space_10x10.sets[1].features))
    for item_id, row in zip(s1.sets[1].item_ids, s1.sets[1].features):
        np.testing.assert_array_equal(ids[item_id], row)


def test_subsample_too_many(space_10x10):
    with pytest.raises(SpaceError):
        subsample(space_10x10, [11, 3], seed=0)


def test_compose_decompose(toy_space):
    assert toy_space.compose((0, 0)) == Candidate((0, 0))
    with pytest.raises(SpaceError):
        toy_space.compose((2, 0))
    with pytest.raises(SpaceError):
        toy_space.compose((0, -1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 9), st.integers(0, 9))
def test_round_trip(i, j):
    space = generate_space([10, 10], dim=3, seed=0)
    cand = space.compose((i, j))
    parts = space.decompose(cand)
    assert tuple(p[0] for p in parts) == (i, j)
    assert space.compose(tuple(p[0] for p in parts)) == cand
    assert space.candidate_from_key(space.item_key(cand)) == cand
    assert space.from_flat(space.flat_index(cand)) == cand


def test_flat_index_is_lexicographic(space_10x10):
    flats = [space_10x10.flat_index(Candidate(c)) for c in itertools.product(range(10), range(10))]
    assert flats == sorted(flats) == list(range(100))


def test_space_memory_is_per_item():
    tracemalloc.start()
    space = generate_space([10_000, 10_000], dim=16, seed=0)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert space.size == 10**8
    # two pools of 10k x 16 float64 = 2.56 MB; any per-candidate storage would be >= 100 MB
    assert peak < 20 * 2 * 10_000 * 16 * 8


def test_file_round_trip(tmp_path, space_10x10):
    write_set(space_10x10.sets[0], tmp_path / "a.txt")
    back = read_set(tmp_path / "a.txt", 0)
    assert back.item_ids == space_10x10.sets[0].item_ids
    np.testing.assert_array_equal(back.features, space_10x10.sets[0].features)
    write_space(space_10x10, tmp_path / "sp")
    again = read_space(tmp_path / "sp")
    assert again.shape == (10, 10)


def test_generation_is_seeded():
    a, b = generate_set(0, 5, 4, seed=1), generate_set(0, 5, 4, seed=1)
    np.testing.assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, generate_set(0, 5, 4, seed=2).features)
    assert a.features.min() >= 0 and a.features.max() < 1
