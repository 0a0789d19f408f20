"""Layered finite-horizon MDPs and exact dynamic-programming primitives.

Steps are 0-based in code: layer ``h`` runs over ``0 .. H-1`` and states are
addressed as ``(h, index)``.  Every per-step table is a tuple of dense arrays,
one per layer, so layers may have different sizes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12


class MdpValidationError(ValueError):
    """Raised by `validate_mdp`; ``location`` names the offending entry."""

    def __init__(self, message: str, location: tuple | None = None):
        super().__init__(message)
        self.location = location


class BoxViolationError(ValueError):
    pass


def _float_dtype(a) -> np.dtype:
    # keep long double (used by finite-difference oracles), promote ints
    return np.result_type(np.asarray(a).dtype, np.float64)


def _freeze(arrays) -> tuple:
    out = []
    for a in arrays:
        arr = np.array(a, dtype=_float_dtype(a))
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


def tables_of(obj) -> tuple:
    """Per-layer arrays of a table type, or the sequence itself."""
    for attr in ("probs", "q", "r", "v", "d"):
        if hasattr(obj, attr):
            return getattr(obj, attr)
    return tuple(obj)


def stack_layers(tables) -> np.ndarray:
    return np.concatenate([np.asarray(t) for t in tables_of(tables)], axis=0)


def split_layers(flat: np.ndarray, layer_sizes: Sequence[int]) -> tuple:
    cuts = np.cumsum(layer_sizes)[:-1]
    return tuple(np.array(part) for part in np.split(flat, cuts, axis=0))


@dataclass(frozen=True, eq=False)
class LayeredMdp:
    """Finite-horizon MDP with a layered state space.

    transitions[h] has shape (S_h, A, S_{h+1}) for h < H-1; reward[h] has
    shape (S_h, A) and holds the true reward used to score learners.
    """

    layer_sizes: tuple
    num_actions: int
    initial: np.ndarray
    transitions: tuple
    reward: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "num_actions", int(self.num_actions))
        init = np.array(self.initial, dtype=_float_dtype(self.initial))
        init.setflags(write=False)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "transitions", _freeze(self.transitions))
        object.__setattr__(self, "reward", _freeze(self.reward))
        A = self.num_actions
        if len(sizes) < 1:
            raise MdpValidationError("horizon must be positive")
        if init.shape != (sizes[0],):
            raise MdpValidationError(
                f"initial distribution has shape {init.shape}, expected ({sizes[0]},)")
        if len(self.transitions) != len(sizes) - 1:
            raise MdpValidationError(
                f"expected {len(sizes) - 1} transition layers, got {len(self.transitions)}")
        for h, P in enumerate(self.transitions):
            if P.shape != (sizes[h], A, sizes[h + 1]):
                raise MdpValidationError(
                    f"transitions[{h}] has shape {P.shape}, expected "
                    f"{(sizes[h], A, sizes[h + 1])}", (h,))
        if len(self.reward) != len(sizes):
            raise MdpValidationError(f"expected {len(sizes)} reward layers")
        for h, r in enumerate(self.reward):
            if r.shape != (sizes[h], A):
                raise MdpValidationError(
                    f"reward[{h}] has shape {r.shape}, expected {(sizes[h], A)}", (h,))

    @property
    def horizon(self) -> int:
        return len(self.layer_sizes)

    @property
    def num_states(self) -> int:
        return int(sum(self.layer_sizes))

    @property
    def offsets(self) -> np.ndarray:
        """Row of the first state of each layer in the stacked (flat) layout."""
        return np.concatenate([[0], np.cumsum(self.layer_sizes)[:-1]]).astype(np.int64)

    def astype(self, dtype) -> "LayeredMdp":
        return LayeredMdp(
            self.layer_sizes, self.num_actions,
            np.asarray(self.initial, dtype=dtype),
            [np.asarray(P, dtype=dtype) for P in self.transitions],
            [np.asarray(r, dtype=dtype) for r in self.reward],
            dict(self.metadata))

    def with_reward(self, reward) -> "LayeredMdp":
        return LayeredMdp(self.layer_sizes, self.num_actions, self.initial,
                          self.transitions, tables_of(reward), dict(self.metadata))

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "layer_sizes": list(self.layer_sizes),
            "num_actions": self.num_actions,
            "initial": self.initial.tolist(),
            "transitions": [P.tolist() for P in self.transitions],
            "reward": [r.tolist() for r in self.reward],
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    probs: tuple  # probs[h]: (S_h, A)

    def __post_init__(self):
        object.__setattr__(self, "probs", _freeze(self.probs))

    @property
    def horizon(self) -> int:
        return len(self.probs)

    def is_deterministic(self, tol: float = ROW_TOL) -> bool:
        return all(np.all(np.abs(p.max(axis=1) - 1.0) <= tol) for p in self.probs)

    def actions(self, h: int) -> np.ndarray:
        """Most likely action per state of layer h (lowest index on ties)."""
        return np.argmax(self.probs[h], axis=1)


@dataclass(frozen=True, eq=False)
class QTable:
    q: tuple
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "q", _freeze(self.q))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True, eq=False)
class RewardTable:
    r: tuple

    def __post_init__(self):
        object.__setattr__(self, "r", _freeze(self.r))

    def in_box(self, tol: float = 0.0) -> bool:
        return all(np.all(x >= -tol) and np.all(x <= 1.0 + tol) for x in self.r)


@dataclass(frozen=True, eq=False)
class ValueTable:
    v: tuple

    def __post_init__(self):
        object.__setattr__(self, "v", _freeze(self.v))


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    d: tuple  # d[h]: (S_h, A), sums to one per layer

    def __post_init__(self):
        object.__setattr__(self, "d", _freeze(self.d))

    def state_marginal(self, h: int) -> np.ndarray:
        return self.d[h].sum(axis=1)


def uniform_policy(mdp: LayeredMdp) -> TabularPolicy:
    A = mdp.num_actions
    return TabularPolicy([np.full((S, A), 1.0 / A) for S in mdp.layer_sizes])


def deterministic_policy(mdp: LayeredMdp, actions) -> TabularPolicy:
    """actions[h][s] -> one-hot policy."""
    probs = []
    for S, acts in zip(mdp.layer_sizes, actions):
        p = np.zeros((S, mdp.num_actions))
        p[np.arange(S), np.asarray(acts, dtype=int)] = 1.0
        probs.append(p)
    return TabularPolicy(probs)


def validate_mdp(mdp: LayeredMdp) -> None:
    """Raise MdpValidationError at the first violated invariant."""
    A = mdp.num_actions
    if A < 1:
        raise MdpValidationError(f"num_actions must be positive, got {A}")
    for h, S in enumerate(mdp.layer_sizes):
        if S < 1:
            raise MdpValidationError(f"layer {h} has size {S}", (h,))
    rho = mdp.initial
    if not np.all(np.isfinite(rho)):
        raise MdpValidationError("initial distribution has non-finite entries")
    if np.any(rho < 0):
        s = int(np.flatnonzero(rho < 0)[0])
        raise MdpValidationError(f"negative initial probability at s={s}", (s,))
    total = float(rho.sum())
    if abs(total - 1.0) > ROW_TOL:
        raise MdpValidationError(f"initial distribution sums to {total:.12g}")
    for h, P in enumerate(mdp.transitions):
        if not np.all(np.isfinite(P)):
            loc = tuple(int(i) for i in np.argwhere(~np.isfinite(P))[0][:2])
            raise MdpValidationError(
                f"non-finite transition probability at (h={h}, s={loc[0]}, a={loc[1]})",
                (h,) + loc)
        if np.any(P < 0):
            s, a, _ = (int(i) for i in np.argwhere(P < 0)[0])
            raise MdpValidationError(
                f"negative transition probability at (h={h}, s={s}, a={a})", (h, s, a))
        sums = P.sum(axis=2)
        bad = np.abs(sums - 1.0) > ROW_TOL
        if np.any(bad):
            s, a = (int(i) for i in np.argwhere(bad)[0])
            raise MdpValidationError(
                f"transition row (h={h}, s={s}, a={a}) sums to {float(sums[s, a]):.12g}",
                (h, s, a))
    for h, r in enumerate(mdp.reward):
        out = ~np.isfinite(r) | (r < 0) | (r > 1)
        if np.any(out):
            s, a = (int(i) for i in np.argwhere(out)[0])
            raise MdpValidationError(
                f"reward at (h={h}, s={s}, a={a}) is {float(r[s, a])!r}, outside [0, 1]",
                (h, s, a))


def lse(values, alpha: float = 1.0, axis: int = -1):
    """alpha * log(sum(exp(values / alpha))) along ``axis``, computed stably."""
    x = np.asarray(values)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    out = m + alpha * np.log(np.sum(np.exp((x - m) / alpha), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)[()]


def softmax_rows(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    z = (x - x.max(axis=-1, keepdims=True)) / alpha
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def soft_value_iteration(mdp: LayeredMdp, r, alpha: float = 1.0):
    """Soft-optimal (Q, V) for reward r by backward recursion with V_H = 0."""
    rewards = tables_of(r)
    H = mdp.horizon
    qs: list = [None] * H
    vs: list = [None] * H
    v_next = None
    for h in range(H - 1, -1, -1):
        q = np.asarray(rewards[h])
        if v_next is not None:
            q = q + mdp.transitions[h] @ v_next
        qs[h] = q
        vs[h] = lse(q, alpha, axis=1)
        v_next = vs[h]
    return QTable(qs, alpha), ValueTable(vs)


def softmax_policy(q: QTable) -> TabularPolicy:
    return TabularPolicy([softmax_rows(x, q.alpha) for x in q.q])


def occupancy(mdp: LayeredMdp, pi) -> OccupancyMeasure:
    probs = tables_of(pi)
    d = [mdp.initial[:, None] * probs[0]]
    for h in range(mdp.horizon - 1):
        mu = np.einsum("sa,sat->t", d[h], mdp.transitions[h])
        d.append(mu[:, None] * probs[h + 1])
    return OccupancyMeasure(d)


def policy_return(mdp: LayeredMdp, pi) -> float:
    d = occupancy(mdp, pi)
    return float(sum(np.sum(dh * rh) for dh, rh in zip(d.d, mdp.reward)))


def tv_distance(p, q) -> float:
    p = np.asarray(p)
    q = np.asarray(q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def occupancy_entropy(d_h) -> float:
    """Expected negative log of the action conditional under d_h."""
    d_h = np.asarray(d_h)
    marg = d_h.sum(axis=1, keepdims=True)
    mask = d_h > 0
    cond = np.where(mask, d_h / np.where(marg > 0, marg, 1.0), 1.0)
    return float(-np.sum(np.where(mask, d_h * np.log(cond), 0.0)))


def _expert_occupancy(demo) -> OccupancyMeasure:
    return demo if isinstance(demo, OccupancyMeasure) else demo.occupancy


def primal_objective(mdp: LayeredMdp, pi, d_hat, alpha: float = 1.0) -> float:
    d_hat = _expert_occupancy(d_hat)
    d = occupancy(mdp, pi)
    return float(sum(tv_distance(e, x) - alpha * occupancy_entropy(x)
                     for e, x in zip(d_hat.d, d.d)))


def _check_box(r) -> None:
    for h, x in enumerate(tables_of(r)):
        x = np.asarray(x)
        if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
            s, a = (int(i) for i in np.argwhere(~((x >= 0) & (x <= 1)))[0])
            raise BoxViolationError(
                f"reward at (h={h}, s={s}, a={a}) is {float(x[s, a])!r}, outside [0, 1]")


def dual_terms(mdp: LayeredMdp, r, demo, alpha: float = 1.0, check_box: bool = True):
    """Dual value, its gradient tables, and the soft best response.

    Returns (value, grad, q, policy, occupancy) where grad = d_hat - d^pi.
    ``check_box=False`` evaluates the smooth extension outside [0, 1]
    (finite differences at the box boundary need it).
    """
    if check_box:
        _check_box(r)
    rewards = tables_of(r)
    d_hat = _expert_occupancy(demo)
    q, v = soft_value_iteration(mdp, rewards, alpha)
    pi = softmax_policy(q)
    d = occupancy(mdp, pi)
    expert_sum = sum(np.sum(e * x) for e, x in zip(d_hat.d, rewards))
    value = expert_sum - np.dot(mdp.initial, v.v[0])
    grad = tuple(e - x for e, x in zip(d_hat.d, d.d))
    return value[()], grad, q, pi, d


def dual_objective(mdp: LayeredMdp, r, demo, alpha: float = 1.0):
    return dual_terms(mdp, r, demo, alpha)[0]


def dual_gradient(mdp: LayeredMdp, r, demo, alpha: float = 1.0) -> tuple:
    return dual_terms(mdp, r, demo, alpha)[1]


def induced_reward(mdp: LayeredMdp, q: QTable) -> RewardTable:
    """Reward under which q is soft-optimal; the last layer keeps Q itself."""
    H = mdp.horizon
    out = []
    for h in range(H):
        x = np.asarray(q.q[h])
        if h < H - 1:
            x = x - mdp.transitions[h] @ lse(q.q[h + 1], q.alpha, axis=1)
        out.append(x)
    return RewardTable(out)


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF draw per row; u is scaled below the row total so zero-mass
    # trailing entries are never returned
    cdf = np.cumsum(probs, axis=1)
    u = u * cdf[:, -1]
    return (cdf <= u[:, None]).sum(axis=1)


def sample_trajectories(mdp: LayeredMdp, pi, n: int, rng: np.random.Generator) -> np.ndarray:
    """n rollouts as an int array of shape (n, H, 2) holding (state, action)."""
    probs = tables_of(pi)
    H = mdp.horizon
    out = np.empty((n, H, 2), dtype=np.int64)
    states = _sample_rows(np.broadcast_to(mdp.initial, (n, mdp.layer_sizes[0])), rng.random(n))
    for h in range(H):
        acts = _sample_rows(probs[h][states], rng.random(n))
        out[:, h, 0] = states
        out[:, h, 1] = acts
        if h < H - 1:
            states = _sample_rows(mdp.transitions[h][states, acts], rng.random(n))
    return out


def rollout(mdp: LayeredMdp, pi, rng: np.random.Generator) -> tuple:
    """One trajectory as a tuple of (state, action) pairs."""
    traj = sample_trajectories(mdp, pi, 1, rng)[0]
    return tuple((int(s), int(a)) for s, a in traj)
