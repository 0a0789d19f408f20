"""Exact Dual Q-DM: projected gradient ascent over rewards in the unit box.

The same loop is exposed as ``ail_fit``, whose trace records the adversarial
objective phi(pi_t, r_t) of the current soft best response.
"""
from __future__ import annotations

import numpy as np

from ..demos import DemoDataset
from ..mdp import LayeredMdp, RewardTable, dual_terms, occupancy_entropy
from .base import EXACT_TOL, REWARD_STEP, SolveResult, SolverConfig, check_finite

ARMIJO = 1e-4
MIN_STEP = 1e-12
# changes below this relative size are treated as roundoff by the line search
ROUNDOFF = 1e-13


def ail_value(demo: DemoDataset, rewards, d, alpha: float) -> float:
    """Expert reward sum minus the learner's reward sum plus entropy bonus."""
    d_hat = demo.occupancy.d
    expert = sum(np.sum(e * r) for e, r in zip(d_hat, rewards))
    learner = sum(np.sum(x * r) for x, r in zip(d.d, rewards))
    entropy = sum(occupancy_entropy(x) for x in d.d)
    return float(expert - (learner + alpha * entropy))


def _box_step(r, grad, step):
    return [np.clip(x + step * g, 0.0, 1.0) for x, g in zip(r, grad)]


def _reward_ascent(mdp: LayeredMdp, demo: DemoDataset, cfg: SolverConfig, method: str,
                   callback=None) -> SolveResult:
    cfg = cfg or SolverConfig()
    alpha = cfg.alpha
    lr, tol = cfg.step(REWARD_STEP), cfg.tol(EXACT_TOL)
    r = [np.zeros((S, mdp.num_actions)) for S in mdp.layer_sizes]
    value, grad, q, pi, d = dual_terms(mdp, r, demo, alpha)
    trace, converged, it = [], False, 0
    for it in range(cfg.max_iters):
        check_finite(value, np.concatenate([x.ravel() for x in r]), method, it)
        pg = _box_step(r, grad, 1.0)
        gnorm = max(float(np.max(np.abs(p - x))) for p, x in zip(pg, r))
        logged = value if method == "dual_qdm_exact" else ail_value(demo, r, d, alpha)
        trace.append((it, float(logged), gnorm))
        if gnorm <= tol:
            converged = True
            break
        # backtracking keeps the ascent monotone when the step overshoots
        step = lr
        while True:
            cand = _box_step(r, grad, step)
            gain = sum(float(np.sum(g * (c - x))) for g, c, x in zip(grad, cand, r))
            out = dual_terms(mdp, cand, demo, alpha)
            slack = ROUNDOFF * max(1.0, abs(value))
            if out[0] >= value + ARMIJO * gain - slack or step < MIN_STEP:
                break
            step *= 0.5
        if step < MIN_STEP:
            break
        r = cand
        value, grad, q, pi, d = out
        if callback is not None:
            callback(it, r)
    else:
        it = cfg.max_iters
    final = value if method == "dual_qdm_exact" else ail_value(demo, r, d, alpha)
    return SolveResult(method, pi, q=q, reward=RewardTable(r), loss_trace=trace,
                       converged=converged, iters=it, config=cfg,
                       final_objective=float(final), grad_tol=tol)


def dual_qdm_exact(mdp: LayeredMdp, demo: DemoDataset, cfg: SolverConfig | None = None,
                   callback=None) -> SolveResult:
    return _reward_ascent(mdp, demo, cfg or SolverConfig(), "dual_qdm_exact", callback)


def ail_fit(mdp: LayeredMdp, demo: DemoDataset, cfg: SolverConfig | None = None,
            callback=None) -> SolveResult:
    return _reward_ascent(mdp, demo, cfg or SolverConfig(), "ail", callback)
