import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ildm.demos import (
    DemoDataset, EmptyDatasetError, TransitionCounter, collect_demos, empirical_occupancy,
    visited, visited_pair,
)

from conftest import small_case

TRAJS = [[[0, 1], [2, 0]], [[0, 1], [1, 1]], [[1, 0], [2, 0]]]


def test_counts_and_occupancy():
    demo = DemoDataset(TRAJS, (2, 3), 2)
    assert demo.counts[0].tolist() == [[0, 2], [1, 0]]
    assert demo.counts[1].tolist() == [[0, 0], [0, 1], [2, 0]]
    assert demo.occupancy.d[0] == pytest.approx(np.array([[0, 2], [1, 0]]) / 3)
    assert demo.state_counts(1).tolist() == [0, 1, 2]
    assert visited(demo, 1, 2) and not visited(demo, 1, 0)
    assert visited_pair(demo, 0, 0, 1) and not visited_pair(demo, 0, 0, 0)
    assert empirical_occupancy(demo) is demo.occupancy


def test_transition_table():
    demo = DemoDataset(TRAJS, (2, 3), 2)
    t = demo.transitions
    triples = {(int(r), int(a), int(n)): float(w)
               for r, a, n, w in zip(t.rows, t.actions, t.next_rows, t.weights)}
    # flat rows: layer 0 -> 0..1, layer 1 -> 2..4, terminal -> 5
    assert triples == pytest.approx({(0, 1, 4): 1 / 3, (0, 1, 3): 1 / 3, (1, 0, 4): 1 / 3,
                                     (4, 0, 5): 2 / 3, (3, 1, 5): 1 / 3})


def test_index_errors():
    demo = DemoDataset(TRAJS, (2, 3), 2)
    with pytest.raises(IndexError):
        demo.visited(2, 0)
    with pytest.raises(IndexError):
        demo.visited(0, 2)
    with pytest.raises(IndexError):
        demo.visited_pair(0, 0, 2)


def test_invalid_datasets():
    with pytest.raises(EmptyDatasetError):
        DemoDataset(np.zeros((0, 2, 2), dtype=int), (2, 3), 2)
    with pytest.raises(ValueError, match="out of range"):
        DemoDataset([[[0, 0], [3, 0]]], (2, 3), 2)
    with pytest.raises(ValueError, match="shape"):
        DemoDataset([[[0, 0]]], (2, 3), 2)
    with pytest.raises(EmptyDatasetError):
        TransitionCounter((2, 3), 2).table()
    with pytest.raises(EmptyDatasetError):
        empirical_occupancy(None)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_incremental_counter_matches_batch(seed, parts):
    mdp, expert, _ = small_case(seed % 500)
    rng = np.random.default_rng(seed)
    demo = collect_demos(mdp, expert, 12, rng)
    counter = TransitionCounter(mdp.layer_sizes, mdp.num_actions)
    for chunk in np.array_split(demo.trajectories, parts):
        counter.add(chunk)
    a, b = counter.table(), demo.transitions
    for name in ("rows", "actions", "next_rows", "weights"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


@given(st.integers(0, 2**32 - 1))
def test_occupancy_sums_to_one(seed):
    mdp, expert, _ = small_case(seed % 500)
    demo = collect_demos(mdp, expert, 5, np.random.default_rng(seed))
    for d in demo.occupancy.d:
        assert d.sum() == pytest.approx(1.0)
    assert demo.transitions.weights.sum() == pytest.approx(mdp.horizon)


def test_collect_demos_is_seeded(d5):
    mdp, expert, _ = d5
    a = collect_demos(mdp, expert, 4, np.random.default_rng(3), seed=3)
    b = collect_demos(mdp, expert, 4, np.random.default_rng(3), seed=3)
    assert np.array_equal(a.trajectories, b.trajectories)
    assert a.mdp_hash == mdp.content_hash()
    with pytest.raises(ValueError):
        collect_demos(mdp, expert, 0, np.random.default_rng(0))


def test_dict_roundtrip(d5):
    mdp, _, demo = d5
    back = DemoDataset.from_dict(demo.to_dict(), mdp)
    assert np.array_equal(back.trajectories, demo.trajectories)
    assert back.mdp_hash == demo.mdp_hash
