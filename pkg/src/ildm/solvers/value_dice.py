"""ValueDICE with a hard max in place of the log-sum-exp."""
from __future__ import annotations

import numpy as np

from ..demos import DemoDataset
from ..mdp import LayeredMdp, QTable, TabularPolicy
from .base import EXACT_TOL, Q_STEP, FlatLayout, SolveResult, SolverConfig, check_finite


def argmax_split(Q: np.ndarray) -> tuple:
    """Row maxima and the uniform subgradient weights over tied maximizers."""
    M = Q.max(axis=1)
    ties = (Q == M[:, None]).astype(Q.dtype)
    return M, ties / ties.sum(axis=1, keepdims=True)


class ValueDiceObjective:
    def __init__(self, mdp: LayeredMdp, demo: DemoDataset):
        self.layout = FlatLayout(mdp)
        self.rho = mdp.initial
        t = demo.transitions
        self.table = t
        self.log_w = np.log(t.weights)
        self.pairs = t.rows * mdp.num_actions + t.actions

    def value_and_grad(self, Q: np.ndarray):
        n, A = Q.shape
        t, first = self.table, self.layout.first
        M, split = argmax_split(Q)
        m_ext = np.concatenate([M, np.zeros(1, dtype=M.dtype)])
        z = -Q[t.rows, t.actions] + m_ext[t.next_rows] + self.log_w
        zmax = z.max()
        log_z = zmax + np.log(np.sum(np.exp(z - zmax)))
        value = -log_z - np.dot(self.rho, M[first])
        p = np.exp(z - log_z)
        grad = np.bincount(self.pairs, weights=p, minlength=n * A).reshape(n, A).astype(Q.dtype)
        coef = np.bincount(t.next_rows, weights=p, minlength=n + 1)[:n]
        grad -= coef[:, None] * split
        grad[first] -= self.rho[:, None] * split[first]
        return value, grad


def greedy_policy(Q: np.ndarray, layout: FlatLayout, ties: str = "uniform") -> TabularPolicy:
    if ties == "uniform":
        probs = argmax_split(Q)[1]
    else:
        probs = np.zeros_like(Q)
        probs[np.arange(Q.shape[0]), np.argmax(Q, axis=1)] = 1.0
    return TabularPolicy(layout.split(probs))


def value_dice_objective(mdp, demo, q) -> float:
    obj = ValueDiceObjective(mdp, demo)
    return float(obj.value_and_grad(obj.layout.stack(q.q))[0])


def value_dice_fit(mdp: LayeredMdp, demo: DemoDataset, cfg: SolverConfig | None = None,
                   callback=None) -> SolveResult:
    """Subgradient ascent from Q = q_init.

    The last iterate of a fixed-step subgradient method keeps crossing the
    kinks of MAX, so the greedy read-out uses how often each action was a
    maximizer over the second half of the run (ties counted fractionally).
    A run that meets grad_tol is read out from its final iterate instead.
    """
    cfg = cfg or SolverConfig()
    obj = ValueDiceObjective(mdp, demo)
    layout = obj.layout
    lr, tol = cfg.step(Q_STEP), cfg.tol(EXACT_TOL)
    Q = layout.full(cfg.q_init)
    if cfg.q_box_C is not None:
        Q = np.clip(Q, 0.0, cfg.q_box_C)
    tail_start = cfg.max_iters // 2
    freq = np.zeros_like(Q)
    trace, converged, it = [], False, 0
    value, grad = obj.value_and_grad(Q)
    for it in range(cfg.max_iters):
        check_finite(value, Q, "value_dice", it)
        gnorm = float(np.max(np.abs(grad)))
        trace.append((it, float(value), gnorm))
        if gnorm <= tol:
            converged = True
            break
        Q = Q + lr * grad
        if cfg.q_box_C is not None:
            Q = np.clip(Q, 0.0, cfg.q_box_C)
        if it >= tail_start:
            freq += argmax_split(Q)[1]
        if callback is not None:
            callback(it, Q)
        value, grad = obj.value_and_grad(Q)
    else:
        it = cfg.max_iters
    check_finite(value, Q, "value_dice", it)
    scores = Q if converged or not freq.any() else freq
    # alpha is irrelevant here; the table is returned for inspection
    q = QTable(layout.split(Q), cfg.alpha)
    return SolveResult("value_dice", greedy_policy(scores, layout, cfg.argmax_ties), q=q,
                       loss_trace=trace, converged=converged, iters=it, config=cfg,
                       final_objective=float(value), grad_tol=tol)
