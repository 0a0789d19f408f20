"""Constructed hard instances, random test MDPs, and the TD-MDP checker."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .demos import DemoDataset
from .mdp import LayeredMdp, TabularPolicy, deterministic_policy, validate_mdp

EXPERT_ACTION = 0


class SpecError(ValueError):
    pass


class NonDeterministicExpertError(ValueError):
    pass


@dataclass(frozen=True)
class ResetCliffSpec:
    S: int
    A: int
    H: int
    N: int

    def __post_init__(self):
        if self.S < 3:
            raise SpecError(f"S must be at least 3, got {self.S}")
        if self.A < 1:
            raise SpecError(f"A must be positive, got {self.A}")
        if self.H < 1:
            raise SpecError(f"H must be positive, got {self.H}")
        if self.N < 1:
            raise SpecError(f"N must be positive, got {self.N}")
        if self.S - 2 > self.N + 1:
            raise SpecError(f"need S-2 <= N+1, got S={self.S}, N={self.N}")

    @property
    def bad_state(self) -> int:
        return self.S - 1

    def initial(self) -> np.ndarray:
        rho = np.zeros(self.S)
        rho[: self.S - 2] = 1.0 / (self.N + 1)
        rho[self.S - 2] = 1.0 - (self.S - 2) / (self.N + 1)
        return rho


def reset_cliff(spec: ResetCliffSpec) -> tuple[LayeredMdp, TabularPolicy]:
    S, A, H = spec.S, spec.A, spec.H
    bad = spec.bad_state
    rho = spec.initial()
    P = np.zeros((S, A, S))
    P[:, :, bad] = 1.0
    P[:bad, EXPERT_ACTION, :] = rho
    reward = np.zeros((S, A))
    reward[:bad, EXPERT_ACTION] = 1.0
    mdp = LayeredMdp((S,) * H, A, rho, [P] * (H - 1), [reward] * H,
                     metadata={"kind": "reset_cliff", "S": S, "A": A, "H": H, "N": spec.N,
                               "bad_state": bad, "expert_action": EXPERT_ACTION})
    validate_mdp(mdp)
    expert = deterministic_policy(mdp, [np.full(S, EXPERT_ACTION)] * H)
    return mdp, expert


def reset_cliff_epsilon(spec: ResetCliffSpec) -> float:
    """Expected initial mass left uncovered by N demo states at one step."""
    rho = spec.initial()
    good = rho[: spec.bad_state]
    return float(np.sum(good * (1.0 - good) ** spec.N))


def epsilon_lower_bound(spec: ResetCliffSpec) -> float:
    return (spec.S - 2) / (math.e * (spec.N + 1))


def example_d5() -> tuple[LayeredMdp, TabularPolicy, DemoDataset]:
    """Two-step TD instance: s1, s2 in layer 0; s3, s4 in layer 1.

    Action 0 (the expert's) moves either layer-0 state to s3, action 1 to s4.
    The single demo visits (s1, a1) then (s3, a1); s2 is never visited.
    """
    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    reward = np.zeros((2, 2))
    reward[:, EXPERT_ACTION] = 1.0
    mdp = LayeredMdp((2, 2), 2, [0.5, 0.5], [P], [reward, reward],
                     metadata={"kind": "d5", "alpha": 0.1, "expert_action": EXPERT_ACTION})
    validate_mdp(mdp)
    expert = deterministic_policy(mdp, [[0, 0], [0, 0]])
    demo = DemoDataset([[[0, 0], [0, 0]]], mdp.layer_sizes, mdp.num_actions,
                       mdp_hash=mdp.content_hash())
    return mdp, expert, demo


def _random_expert(layer_sizes, num_actions, rng, expert_kind):
    if expert_kind == "zero":
        return [np.full(S, EXPERT_ACTION) for S in layer_sizes]
    if expert_kind == "random":
        return [rng.integers(num_actions, size=S) for S in layer_sizes]
    raise ValueError(f"unknown expert_kind {expert_kind!r}")


def _td_biased_layer(S, T, A, experts, reachable, rng, concentration):
    """Candidate rows for TD rejection sampling.

    Every row mixes one shared shape over a random landing set K (proper
    subset of the next layer) with row-specific mass off K.  Expert rows put
    all their mass on K.  The mass a non-expert row keeps on K is drawn
    higher for expert-reachable states than for the others, with overlapping
    ranges so that candidates can still fail the check.
    """
    k = int(rng.integers(1, T)) if T > 1 else 1
    landing = rng.choice(T, size=k, replace=False)
    off = np.setdiff1d(np.arange(T), landing)
    shape = np.zeros(T)
    shape[landing] = rng.dirichlet(np.full(k, concentration))
    P = np.empty((S, A, T))
    for s in range(S):
        lo, hi = (0.3, 0.9) if reachable[s] else (0.0, 0.6)
        for a in range(A):
            if a == experts[s] or off.size == 0:
                P[s, a] = shape
                continue
            keep = rng.uniform(lo, hi)
            row = keep * shape
            row[off] += (1.0 - keep) * rng.dirichlet(np.full(off.size, concentration))
            P[s, a] = row
    return P, shape > 0


def random_layered_mdp(layer_sizes, num_actions: int, rng: np.random.Generator,
                       expert_kind: str = "zero", transition_kind: str = "dirichlet",
                       concentration: float = 1.0) -> tuple[LayeredMdp, TabularPolicy]:
    """Random MDP with Dirichlet rows and a deterministic expert.

    transition_kind="td_biased" draws candidates for TD rejection sampling
    (see _td_biased_layer); the initial distribution then has random support.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if any(s < 1 for s in sizes) or num_actions < 1:
        raise ValueError("layer sizes and num_actions must be positive")
    if transition_kind not in ("dirichlet", "td_biased"):
        raise ValueError(f"unknown transition_kind {transition_kind!r}")
    A = num_actions
    experts = _random_expert(sizes, A, rng, expert_kind)
    if transition_kind == "td_biased":
        k = int(rng.integers(1, sizes[0] + 1))
        support = rng.choice(sizes[0], size=k, replace=False)
        rho = np.zeros(sizes[0])
        rho[support] = rng.dirichlet(np.full(k, concentration))
    else:
        rho = rng.dirichlet(np.full(sizes[0], concentration))
    reachable = rho > 0
    transitions = []
    for h in range(len(sizes) - 1):
        S, T = sizes[h], sizes[h + 1]
        if transition_kind == "td_biased":
            P, reachable = _td_biased_layer(S, T, A, experts[h], reachable, rng, concentration)
        else:
            P = rng.dirichlet(np.full(T, concentration), size=(S, A))
        transitions.append(P)
    reward = [rng.random((S, A)) for S in sizes]
    mdp = LayeredMdp(sizes, A, rho, transitions, reward,
                     metadata={"kind": "random", "expert_kind": expert_kind,
                               "transition_kind": transition_kind})
    validate_mdp(mdp)
    return mdp, deterministic_policy(mdp, experts)


@dataclass(frozen=True)
class TdMdpReport:
    is_td: bool
    first_violation: dict | None = None


def expert_actions(expert: TabularPolicy, tol: float = 1e-12) -> list:
    acts = []
    for h, p in enumerate(expert.probs):
        if np.any(np.abs(p.max(axis=1) - 1.0) > tol):
            s = int(np.flatnonzero(np.abs(p.max(axis=1) - 1.0) > tol)[0])
            raise NonDeterministicExpertError(f"expert row (h={h}, s={s}) is not one-hot")
        acts.append(np.argmax(p, axis=1))
    return acts


def expert_reachable_sets(mdp: LayeredMdp, expert: TabularPolicy) -> list:
    """Boolean masks of expert-reachable states per layer (layer 0: supp rho)."""
    acts = expert_actions(expert)
    masks = [mdp.initial > 0]
    for h, P in enumerate(mdp.transitions):
        rows = P[np.arange(mdp.layer_sizes[h]), acts[h]]
        masks.append(np.any(rows > 0, axis=0))
    return masks


def is_td_mdp(mdp: LayeredMdp, expert: TabularPolicy) -> TdMdpReport:
    acts = expert_actions(expert)
    reach = expert_reachable_sets(mdp, expert)
    A = mdp.num_actions
    for h, P in enumerate(mdp.transitions):
        targets = np.flatnonzero(reach[h + 1])
        # property 1: expert action strictly more likely to hit each expert state
        for s in range(mdp.layer_sizes[h]):
            ae = acts[h][s]
            for a in range(A):
                if a == ae:
                    continue
                for t in targets:
                    if not P[s, ae, t] > P[s, a, t]:
                        return TdMdpReport(False, {"property": 1, "h": h, "s": s, "a": a,
                                                   "expert_action": int(ae), "next_state": int(t)})
        # property 2: expert-type states dominate other states per action
        inside = np.flatnonzero(reach[h])
        outside = np.flatnonzero(~reach[h])
        for t in targets:
            for a in range(A):
                for se in inside:
                    for so in outside:
                        if not P[se, a, t] >= P[so, a, t]:
                            return TdMdpReport(False, {"property": 2, "h": h, "expert_state": int(se),
                                                       "other_state": int(so), "a": a,
                                                       "next_state": int(t)})
    return TdMdpReport(True, None)


def random_td_mdp(layer_sizes, num_actions: int, rng: np.random.Generator,
                  expert_kind: str = "zero", max_tries: int = 10_000):
    """Rejection-sample td_biased candidates until is_td_mdp accepts one."""
    for _ in range(max_tries):
        mdp, expert = random_layered_mdp(layer_sizes, num_actions, rng, expert_kind,
                                         transition_kind="td_biased")
        if is_td_mdp(mdp, expert).is_td:
            meta = dict(mdp.metadata, td=True)
            return LayeredMdp(mdp.layer_sizes, mdp.num_actions, mdp.initial,
                              mdp.transitions, mdp.reward, meta), expert
    raise RuntimeError(f"no TD instance found in {max_tries} draws")
