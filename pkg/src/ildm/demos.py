"""Expert datasets and the empirical statistics the learners consume."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import LayeredMdp, OccupancyMeasure, sample_trajectories


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransitionTable:
    """Aggregated (row, action, next_row) triples in the flat state layout.

    ``next_rows`` equals the total state count for the final step, which
    callers treat as a terminal state with zero value.  ``weights`` are counts
    divided by the number of trajectories.
    """

    rows: np.ndarray
    actions: np.ndarray
    next_rows: np.ndarray
    weights: np.ndarray


def _flat_keys(trajs: np.ndarray, offsets: np.ndarray, num_states: int, num_actions: int):
    H = trajs.shape[1]
    rows = trajs[:, :, 0] + offsets[None, :]
    nxt = np.empty_like(rows)
    nxt[:, : H - 1] = rows[:, 1:]
    nxt[:, H - 1] = num_states
    return ((rows * num_actions + trajs[:, :, 1]) * (num_states + 1) + nxt).ravel()


def _decode(keys: np.ndarray, counts: np.ndarray, total: int,
            num_states: int, num_actions: int) -> TransitionTable:
    nxt = keys % (num_states + 1)
    pair = keys // (num_states + 1)
    return TransitionTable(pair // num_actions, pair % num_actions, nxt, counts / total)


class TransitionCounter:
    """Append-only multiset of trajectory transitions (used as replay buffer)."""

    def __init__(self, layer_sizes, num_actions: int):
        self.layer_sizes = tuple(layer_sizes)
        self.num_actions = int(num_actions)
        self.offsets = np.concatenate([[0], np.cumsum(self.layer_sizes)[:-1]]).astype(np.int64)
        self.num_states = int(sum(self.layer_sizes))
        self.num_trajectories = 0
        self._keys = np.empty(0, dtype=np.int64)
        self._counts = np.empty(0, dtype=np.int64)

    def add(self, trajs: np.ndarray) -> None:
        trajs = np.asarray(trajs, dtype=np.int64)
        if trajs.size == 0:
            return
        new = _flat_keys(trajs, self.offsets, self.num_states, self.num_actions)
        keys, inv = np.unique(np.concatenate([self._keys, new]), return_inverse=True)
        weights = np.concatenate([self._counts, np.ones(new.size, dtype=np.int64)])
        self._keys = keys
        self._counts = np.bincount(inv.ravel(), weights=weights, minlength=keys.size).astype(np.int64)
        self.num_trajectories += trajs.shape[0]

    def table(self) -> TransitionTable:
        if self.num_trajectories == 0:
            raise EmptyDatasetError("no trajectories recorded")
        return _decode(self._keys, self._counts, self.num_trajectories,
                       self.num_states, self.num_actions)


@dataclass(frozen=True, eq=False)
class DemoDataset:
    """Expert trajectories plus cached counts and empirical occupancy.

    trajectories has shape (N, H, 2) with (state index, action) per step.
    """

    trajectories: np.ndarray
    layer_sizes: tuple
    num_actions: int
    seed: int | None = None
    mdp_hash: str | None = None
    counts: tuple = field(init=False, repr=False)
    occupancy: OccupancyMeasure = field(init=False, repr=False)
    transitions: TransitionTable = field(init=False, repr=False)

    def __post_init__(self):
        trajs = np.array(self.trajectories, dtype=np.int64)
        sizes = tuple(int(s) for s in self.layer_sizes)
        A = int(self.num_actions)
        if trajs.ndim != 3 or trajs.shape[0] == 0:
            raise EmptyDatasetError("dataset needs at least one trajectory")
        N, H, two = trajs.shape
        if two != 2 or H != len(sizes):
            raise ValueError(f"trajectories must have shape (N, {len(sizes)}, 2), got {trajs.shape}")
        for h, S in enumerate(sizes):
            s, a = trajs[:, h, 0], trajs[:, h, 1]
            if np.any((s < 0) | (s >= S)) or np.any((a < 0) | (a >= A)):
                raise ValueError(f"trajectory entry out of range at step {h}")
        trajs.setflags(write=False)
        counts = []
        for h, S in enumerate(sizes):
            c = np.zeros((S, A), dtype=np.int64)
            np.add.at(c, (trajs[:, h, 0], trajs[:, h, 1]), 1)
            c.setflags(write=False)
            counts.append(c)
        set_ = object.__setattr__
        set_(self, "trajectories", trajs)
        set_(self, "layer_sizes", sizes)
        set_(self, "num_actions", A)
        set_(self, "counts", tuple(counts))
        set_(self, "occupancy", OccupancyMeasure([c / N for c in counts]))
        counter = TransitionCounter(sizes, A)
        counter.add(trajs)
        set_(self, "transitions", counter.table())

    @property
    def num_trajectories(self) -> int:
        return int(self.trajectories.shape[0])

    @property
    def horizon(self) -> int:
        return len(self.layer_sizes)

    def state_counts(self, h: int) -> np.ndarray:
        return self.counts[h].sum(axis=1)

    def _check_index(self, h: int, s: int) -> None:
        if not 0 <= h < self.horizon:
            raise IndexError(f"step {h} outside 0..{self.horizon - 1}")
        if not 0 <= s < self.layer_sizes[h]:
            raise IndexError(f"state {s} outside layer {h} of size {self.layer_sizes[h]}")

    def visited(self, h: int, s: int) -> bool:
        self._check_index(h, s)
        return bool(self.counts[h][s].sum() > 0)

    def visited_pair(self, h: int, s: int, a: int) -> bool:
        self._check_index(h, s)
        if not 0 <= a < self.num_actions:
            raise IndexError(f"action {a} outside 0..{self.num_actions - 1}")
        return bool(self.counts[h][s, a] > 0)

    def visited_mask(self, h: int) -> np.ndarray:
        return self.counts[h].sum(axis=1) > 0

    def to_dict(self) -> dict:
        return {
            "mdp_hash": self.mdp_hash,
            "seed": self.seed,
            "trajectories": self.trajectories.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, mdp: LayeredMdp) -> "DemoDataset":
        return cls(np.asarray(data["trajectories"], dtype=np.int64).reshape(
                       len(data["trajectories"]), mdp.horizon, 2),
                   mdp.layer_sizes, mdp.num_actions,
                   seed=data.get("seed"), mdp_hash=data.get("mdp_hash"))


def collect_demos(mdp: LayeredMdp, expert, N: int, rng: np.random.Generator,
                  seed: int | None = None) -> DemoDataset:
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    trajs = sample_trajectories(mdp, expert, N, rng)
    return DemoDataset(trajs, mdp.layer_sizes, mdp.num_actions,
                       seed=seed, mdp_hash=mdp.content_hash())


def empirical_occupancy(demo: DemoDataset) -> OccupancyMeasure:
    if demo is None or demo.num_trajectories == 0:
        raise EmptyDatasetError("empirical occupancy of an empty dataset")
    return demo.occupancy


def visited(demo: DemoDataset, h: int, s: int) -> bool:
    return demo.visited(h, s)


def visited_pair(demo: DemoDataset, h: int, s: int, a: int) -> bool:
    return demo.visited_pair(h, s, a)
