"""IQ-Learn (TV, chi-squared, and online-regularized variants) on dense Q tables."""
from __future__ import annotations

import numpy as np

from ..demos import DemoDataset, TransitionCounter, TransitionTable
from ..mdp import LayeredMdp, QTable, lse, sample_trajectories, softmax_policy, softmax_rows
from .base import EXACT_TOL, Q_STEP, FlatLayout, SolveResult, SolverConfig, check_finite

VARIANTS = ("tv", "chi2", "reg")


def _variant(name: str) -> str:
    v = name.lower()
    if v not in VARIANTS:
        raise ValueError(f"unknown IQ-Learn variant {name!r}; expected one of {VARIANTS}")
    return v


def bellman_square(Q, V, P, table: TransitionTable, alpha: float):
    """Value and gradient of 1/4 * E[sum_h (Q(s,a) - LSE(Q)(s'))^2] over ``table``."""
    n, A = Q.shape
    v_ext = np.concatenate([V, np.zeros(1, dtype=V.dtype)])
    err = Q[table.rows, table.actions] - v_ext[table.next_rows]
    we = table.weights * err
    value = 0.25 * np.sum(we * err)
    # np.add.at instead of bincount so long-double inputs stay long double
    grad = np.zeros_like(Q)
    np.add.at(grad, (table.rows, table.actions), 0.5 * we)
    coef = np.zeros(n + 1, dtype=Q.dtype)
    np.add.at(coef, table.next_rows, 0.5 * we)
    grad -= coef[:n, None] * P
    return value, grad


class IqObjective:
    """L(Q) for one variant in the flat layout; ascent direction is +grad."""

    def __init__(self, mdp: LayeredMdp, demo: DemoDataset, variant: str = "tv",
                 alpha: float = 1.0):
        self.layout = FlatLayout(mdp)
        self.variant = _variant(variant)
        self.alpha = alpha
        self.expert = self.layout.stack(demo.occupancy.d)
        # weight of LSE(Q)(s) per row: rho on the first layer, the demo state
        # frequency (as a next state) on later layers
        weight = self.expert.sum(axis=1)
        weight[self.layout.first] = mdp.initial
        self.lse_weight = weight
        self.demo_table = demo.transitions

    def value_and_grad(self, Q: np.ndarray, buffer: TransitionTable | None = None):
        V = lse(Q, self.alpha, axis=1)
        P = softmax_rows(Q, self.alpha)
        value = np.sum(self.expert * Q) - np.dot(self.lse_weight, V)
        grad = self.expert - self.lse_weight[:, None] * P
        if self.variant == "chi2":
            sq, g = bellman_square(Q, V, P, self.demo_table, self.alpha)
            value, grad = value - sq, grad - g
        elif self.variant == "reg" and buffer is not None:
            sq, g = bellman_square(Q, V, P, buffer, self.alpha)
            value, grad = value - sq, grad - g
        return value, grad

    def layer_terms(self, Q: np.ndarray) -> np.ndarray:
        """Per-step contributions of the TV objective (they sum to its value)."""
        V = lse(Q, self.alpha, axis=1)
        per_row = np.sum(self.expert * Q, axis=1) - self.lse_weight * V
        return np.array([per_row[o:o + S].sum()
                         for o, S in zip(self.layout.offsets, self.layout.layer_sizes)])


def iq_objective(mdp, demo, q, variant: str = "tv", alpha: float | None = None,
                 buffer: TransitionTable | None = None):
    obj = IqObjective(mdp, demo, variant, q.alpha if alpha is None else alpha)
    return obj.value_and_grad(obj.layout.stack(q.q), buffer)[0]


def iq_gradient(mdp, demo, q, variant: str = "tv", alpha: float | None = None,
                buffer: TransitionTable | None = None) -> tuple:
    obj = IqObjective(mdp, demo, variant, q.alpha if alpha is None else alpha)
    return obj.layout.split(obj.value_and_grad(obj.layout.stack(q.q), buffer)[1])


def iq_learn_fit(mdp: LayeredMdp, demo: DemoDataset, variant: str = "tv",
                 cfg: SolverConfig | None = None, callback=None) -> SolveResult:
    """Full-batch gradient ascent on the IQ-Learn objective from Q = q_init."""
    cfg = cfg or SolverConfig()
    variant = _variant(variant)
    obj = IqObjective(mdp, demo, variant, cfg.alpha)
    layout = obj.layout
    lr, tol = cfg.step(Q_STEP), cfg.tol(EXACT_TOL)
    cap = cfg.q_box_C
    Q = layout.full(cfg.q_init)
    if cap is not None:
        Q = np.clip(Q, 0.0, cap)
    rng = np.random.default_rng(cfg.seed)
    counter = TransitionCounter(mdp.layer_sizes, mdp.num_actions) if variant == "reg" else None
    method = f"iq_{variant}"

    def evaluate(Q):
        table = None
        if counter is not None:
            pi = layout.split(softmax_rows(Q, cfg.alpha))
            counter.add(sample_trajectories(mdp, pi, cfg.online_rollouts_per_iter, rng))
            table = counter.table()
        return obj.value_and_grad(Q, table)

    trace, converged, it = [], False, 0
    value, grad = evaluate(Q)
    for it in range(cfg.max_iters):
        check_finite(value, Q, method, it)
        if cap is None:
            nxt, pg = Q + lr * grad, grad
        else:
            nxt = np.clip(Q + lr * grad, 0.0, cap)
            pg = (nxt - Q) / lr
        gnorm = float(np.max(np.abs(pg)))
        trace.append((it, float(value), gnorm))
        if gnorm <= tol:
            converged = True
            break
        Q = nxt
        if callback is not None:
            callback(it, Q)
        value, grad = evaluate(Q)
    else:
        it = cfg.max_iters
    check_finite(value, Q, method, it)
    q = QTable(layout.split(Q), cfg.alpha)
    return SolveResult(method, softmax_policy(q), q=q, loss_trace=trace, converged=converged,
                       iters=it, config=cfg, final_objective=float(value), grad_tol=tol)
