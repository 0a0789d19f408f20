"""Behavioral cloning in closed form (count ratios)."""
from __future__ import annotations

import numpy as np

from ..demos import DemoDataset
from ..mdp import TabularPolicy
from .base import SolveResult, SolverConfig


def bc_fit(demo: DemoDataset, shape=None) -> TabularPolicy:
    """pi(a|s) = n(s,a)/n(s) on visited states, uniform elsewhere.

    ``shape`` is an optional (layer_sizes, num_actions) pair and must match
    the dataset's own.
    """
    sizes, A = demo.layer_sizes, demo.num_actions
    if shape is not None:
        want = (tuple(shape[0]), int(shape[1]))
        if want != (sizes, A):
            raise ValueError(f"shape {want} does not match dataset {(sizes, A)}")
    probs = []
    for c in demo.counts:
        n = c.sum(axis=1, keepdims=True)
        probs.append(np.where(n > 0, c / np.maximum(n, 1), 1.0 / A))
    return TabularPolicy(probs)


def bc_log_likelihood(demo: DemoDataset, pi) -> float:
    """Average over trajectories of sum_h log pi(a_h|s_h)."""
    probs = pi.probs if hasattr(pi, "probs") else pi
    total = 0.0
    for h, c in enumerate(demo.counts):
        mask = c > 0
        total += float(np.sum(c[mask] * np.log(probs[h][mask])))
    return total / demo.num_trajectories


def bc_solve(mdp, demo: DemoDataset, cfg: SolverConfig | None = None) -> SolveResult:
    pi = bc_fit(demo, (mdp.layer_sizes, mdp.num_actions))
    return SolveResult("bc", pi, converged=True, iters=0, config=cfg,
                       final_objective=bc_log_likelihood(demo, pi))
