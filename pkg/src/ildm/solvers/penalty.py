"""Dual Q-DM with Bellman constraints enforced by squared-ReLU penalties."""
from __future__ import annotations

import numpy as np

from ..demos import DemoDataset, TransitionCounter, TransitionTable
from ..mdp import LayeredMdp, QTable, lse, sample_trajectories, softmax_policy, softmax_rows
from .base import PENALTY_TOL, Q_STEP, SolveResult, SolverConfig, check_finite
from .iq_learn import IqObjective


def penalty_step(beta: float) -> float:
    """Default step: the Q-space step shrunk by the penalty curvature 2*beta."""
    return Q_STEP / (1.0 + 2.0 * beta * Q_STEP)


def bellman_penalty(Q: np.ndarray, target_v: np.ndarray, table: TransitionTable, beta: float):
    """Value and gradient of beta * E[relu(-u)^2 + relu(u - 1)^2], u = Q - LSE(Qbar)(s')."""
    n, A = Q.shape
    v_ext = np.concatenate([target_v, np.zeros(1, dtype=target_v.dtype)])
    u = Q[table.rows, table.actions] - v_ext[table.next_rows]
    low = np.maximum(-u, 0.0)
    high = np.maximum(u - 1.0, 0.0)
    value = beta * np.sum(table.weights * (low * low + high * high))
    coef = 2.0 * beta * table.weights * (high - low)
    grad = np.bincount(table.rows * A + table.actions, weights=coef,
                       minlength=n * A).reshape(n, A)
    return value, grad


def dual_qdm_penalty(mdp: LayeredMdp, demo: DemoDataset, cfg: SolverConfig | None = None,
                     callback=None) -> SolveResult:
    cfg = cfg or SolverConfig()
    if cfg.beta < 0:
        raise ValueError("beta must be non-negative")
    obj = IqObjective(mdp, demo, "tv", cfg.alpha)
    layout = obj.layout
    lr, tol = cfg.step(penalty_step(cfg.beta)), cfg.tol(PENALTY_TOL)
    rng = np.random.default_rng(cfg.seed)
    Q = layout.full(cfg.q_init)
    target = Q.copy()
    buffer = TransitionCounter(mdp.layer_sizes, mdp.num_actions)

    def evaluate(Q, target):
        pi = layout.split(softmax_rows(Q, cfg.alpha))
        buffer.add(sample_trajectories(mdp, pi, cfg.online_rollouts_per_iter, rng))
        value, grad = obj.value_and_grad(Q)
        pen, pgrad = bellman_penalty(Q, lse(target, cfg.alpha, axis=1), buffer.table(), cfg.beta)
        return value - pen, grad - pgrad

    trace, converged, it = [], False, 0
    value, grad = evaluate(Q, target)
    for it in range(cfg.max_iters):
        check_finite(value, Q, "dual_qdm_penalty", it)
        gnorm = float(np.max(np.abs(grad)))
        trace.append((it, float(value), gnorm))
        if gnorm <= tol:
            converged = True
            break
        Q = Q + lr * grad
        target = cfg.polyak_tau * Q + (1.0 - cfg.polyak_tau) * target
        if callback is not None:
            callback(it, Q, target)
        value, grad = evaluate(Q, target)
    else:
        it = cfg.max_iters
    check_finite(value, Q, "dual_qdm_penalty", it)
    q = QTable(layout.split(Q), cfg.alpha)
    return SolveResult("dual_qdm_penalty", softmax_policy(q), q=q, loss_trace=trace,
                       converged=converged, iters=it, config=cfg,
                       final_objective=float(value), grad_tol=tol)
