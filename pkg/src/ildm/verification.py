"""Executable theorem checks and analytic oracles, each returning a CheckReport."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bench import BenchConfig, run_bench
from .demos import DemoDataset
from .instances import ResetCliffSpec, expert_actions, is_td_mdp, reset_cliff_epsilon
from .mdp import (
    LayeredMdp, dual_terms, induced_reward, occupancy, primal_objective, soft_value_iteration,
    softmax_policy, split_layers, stack_layers,
)
from .solvers import (
    IqObjective, SolverConfig, ail_value, bc_fit, dual_qdm_exact, dual_qdm_penalty,
    iq_learn_fit,
)


class RegimeViolationError(ValueError):
    pass


class UnconvergedInputError(ValueError):
    pass


@dataclass
class CheckReport:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    details: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "metrics": {k: _plain(v) for k, v in sorted(self.metrics.items())},
            "tolerances": {k: _plain(v) for k, v in sorted(self.tolerances.items())},
            "details": self.details,
        }


def _plain(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


def per_state_tv(p, q) -> np.ndarray:
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=1)


def max_policy_tv(pi, mu, start: int = 0) -> float:
    return max((float(per_state_tv(a, b).max()) for a, b in
                zip(pi.probs[start:], mu.probs[start:])), default=0.0)


# thm1: IQ-Learn (TV) against BC

def check_thm1(mdp: LayeredMdp, demo: DemoDataset, cfg: SolverConfig | None = None,
               tv_tol: float = 1e-3, uniform_tol: float = 1e-6, result=None) -> CheckReport:
    cfg = cfg or SolverConfig()
    res = result if result is not None else iq_learn_fit(mdp, demo, "tv", cfg)
    bc = bc_fit(demo)
    worst_tv, where = 0.0, None
    for h in range(1, mdp.horizon):
        tv = per_state_tv(res.policy.probs[h], bc.probs[h])
        if tv.max() > worst_tv:
            worst_tv, where = float(tv.max()), (h, int(tv.argmax()))
    uncovered = ~demo.visited_mask(0)
    dev = np.abs(res.policy.probs[0][uncovered] - 1.0 / mdp.num_actions)
    worst_dev = float(dev.max()) if dev.size else 0.0
    passed = worst_tv <= tv_tol and worst_dev <= uniform_tol
    details = None
    if worst_tv > tv_tol:
        details = f"policy differs from BC at (h={where[0]}, s={where[1]}) by TV {worst_tv:.3e}"
    elif worst_dev > uniform_tol:
        details = f"uncovered initial state deviates from uniform by {worst_dev:.3e}"
    return CheckReport("thm1", passed,
                       {"max_tv_later_steps": worst_tv, "max_uniform_deviation": worst_dev,
                        "iq_iters": res.iters},
                       {"tv": tv_tol, "uniform": uniform_tol}, details)


# cor1: Reset Cliff gap oracles and the horizon sweep

def bc_gap_closed_form(spec: ResetCliffSpec) -> float:
    """Expected imitation gap of BC on Reset Cliff, averaged over demo draws.

    At each step the learner sits at a fresh draw from rho; it falls into the
    bad chain with probability (1 - 1/|A|) * eps, so with q = (1 - 1/|A|) * eps
    the gap is sum_h (1 - q)^(h-1) q (H - h + 1).
    """
    q = (1.0 - 1.0 / spec.A) * reset_cliff_epsilon(spec)
    H = spec.H
    return float(sum((1.0 - q) ** (h - 1) * q * (H - h + 1) for h in range(1, H + 1)))


def bc_gap_lower_bound(spec: ResetCliffSpec) -> float:
    """(1 - 1/|A|) sum_h (1 - eps)^(h-1) eps (H - h + 1): counts only the first uncovered visit."""
    eps = reset_cliff_epsilon(spec)
    H = spec.H
    return float((1.0 - 1.0 / spec.A) *
                 sum((1.0 - eps) ** (h - 1) * eps * (H - h + 1) for h in range(1, H + 1)))


def regime_ratio(spec: ResetCliffSpec) -> float:
    """eps * H / 2; the quadratic regime requires this to be at most one."""
    return reset_cliff_epsilon(spec) * spec.H / 2.0


def cor1_metrics(rows, S: int, A: int, N: int, horizons, z_max: float = 3.0,
                 ratio_range=(3.0, 5.0), overlap_tol: float = 0.1,
                 dual_factor: float = 0.1, overlap_methods=()) -> tuple[dict, dict]:
    """Metrics and per-criterion verdicts from bench rows.

    Verdict keys: closed_form (mean BC and IQ gaps within z_max standard
    errors of the closed form), doubling (ratio of consecutive doubled
    horizons inside ratio_range), dual_small (dual and AIL at most
    dual_factor times BC at the largest horizon) and, when overlap_methods
    is given, overlap (each within overlap_tol relative of BC at every H).
    """
    stats: dict = {}
    for r in rows:
        stats.setdefault((r.method, r.H), []).append(r.gap)
    summary = {}
    for key, gaps in stats.items():
        g = np.asarray(gaps, dtype=float)
        se = float(g.std(ddof=1) / math.sqrt(g.size)) if g.size > 1 else 0.0
        summary[key] = (float(g.mean()), se)
    metrics: dict = {}
    verdict = {"closed_form": True, "doubling": True, "dual_small": True}
    if overlap_methods:
        verdict["overlap"] = True
    hs = sorted(int(h) for h in horizons)
    for H in hs:
        closed = bc_gap_closed_form(ResetCliffSpec(S, A, H, N))
        metrics[f"closed_form_H{H}"] = closed
        for m in ("bc", "iq_tv"):
            if (m, H) not in summary:
                continue
            mean, se = summary[(m, H)]
            z = (mean - closed) / se if se > 0 else (0.0 if mean == closed else math.inf)
            metrics[f"{m}_mean_H{H}"] = mean
            metrics[f"{m}_se_H{H}"] = se
            metrics[f"{m}_z_H{H}"] = z
            verdict["closed_form"] &= abs(z) <= z_max
        bc_mean = summary.get(("bc", H), (math.nan, 0))[0]
        for m in overlap_methods:
            if (m, H) in summary:
                rel = abs(summary[(m, H)][0] - bc_mean) / bc_mean
                metrics[f"{m}_rel_to_bc_H{H}"] = rel
                verdict["overlap"] &= rel <= overlap_tol
    for lo, hi in zip(hs, hs[1:]):
        if hi != 2 * lo:
            continue
        for m in ("bc", "iq_tv"):
            if (m, lo) in summary and (m, hi) in summary:
                ratio = summary[(m, hi)][0] / summary[(m, lo)][0]
                metrics[f"{m}_ratio_H{hi}_over_H{lo}"] = ratio
                verdict["doubling"] &= ratio_range[0] <= ratio <= ratio_range[1]
    top = hs[-1]
    bc_top = summary.get(("bc", top), (math.nan, 0))[0]
    for m in ("dual_qdm_exact", "ail"):
        if (m, top) in summary:
            frac = summary[(m, top)][0] / bc_top
            metrics[f"{m}_over_bc_H{top}"] = frac
            verdict["dual_small"] &= frac <= dual_factor
    return metrics, verdict


def check_cor1(S: int = 4, A: int = 5, N: int = 2, horizons=(10, 20, 40, 80), seeds=range(100),
               cfg: SolverConfig | None = None,
               methods=("bc", "iq_tv", "dual_qdm_exact", "ail"), overlap_methods=(),
               strict_regime: bool = True, rows=None, overrides=None, base_seed: int = 0,
               threads: int | None = None) -> CheckReport:
    """Horizon sweep on Reset Cliff against the BC closed form.

    overlap_methods (for example ("iq_tv", "value_dice")) adds the check that
    their mean gaps stay within 10% of BC's; those methods are added to the
    sweep automatically.
    """
    worst = max(regime_ratio(ResetCliffSpec(S, A, H, N)) for H in horizons)
    if strict_regime and worst > 1.0:
        raise RegimeViolationError(
            f"eps*H/2 = {worst:.3f} > 1 at H={max(horizons)}: outside the quadratic regime")
    if rows is None:
        methods = tuple(methods) + tuple(m for m in overlap_methods if m not in methods)
        bench = BenchConfig(methods=methods, instance="reset_cliff", S=S, A=A, N=N,
                            horizons=tuple(horizons), seeds=tuple(seeds), base_seed=base_seed,
                            solver=cfg or SolverConfig(), overrides=dict(overrides or {}))
        rows = run_bench(bench, threads)
    metrics, verdict = cor1_metrics(rows, S, A, N, horizons, overlap_methods=overlap_methods)
    metrics["regime_eps_h_over_2"] = worst
    for k, v in verdict.items():
        metrics[f"pass_{k}"] = v
    failed = [k for k, v in verdict.items() if not v]
    return CheckReport("cor1", not failed, metrics,
                       {"z": 3.0, "ratio_lo": 3.0, "ratio_hi": 5.0, "overlap": 0.1, "dual": 0.1},
                       f"failed: {', '.join(failed)}" if failed else None)


# thm2: saddle point certificate of the exact dual solution

def check_thm2_saddle(mdp: LayeredMdp, demo: DemoDataset, result, cfg: SolverConfig | None = None,
                      tv_tol: float = 1e-9, box_tol: float = 1e-3,
                      value_tol: float = 1e-6) -> CheckReport:
    cfg = cfg or SolverConfig()
    if not result.converged or result.reward is None:
        raise UnconvergedInputError("saddle check needs a converged dual_qdm_exact result")
    alpha = cfg.alpha
    r = result.reward.r
    # (i) the policy is the soft best response to its own reward
    q, _ = soft_value_iteration(mdp, r, alpha)
    best = softmax_policy(q)
    best_tv = max_policy_tv(result.policy, best)
    # (ii) the reward maximizes sum (d_hat - d) r over the box given the policy
    d = occupancy(mdp, result.policy)
    worst_box, where = 0.0, None
    for h, (e, x, rh) in enumerate(zip(demo.occupancy.d, d.d, r)):
        diff = e - x
        miss = np.zeros_like(diff)
        up = diff > box_tol
        down = diff < -box_tol
        miss[up] = np.abs(rh[up] - 1.0)
        miss[down] = np.abs(rh[down])
        if miss.max() > worst_box:
            worst_box = float(miss.max())
            where = (h,) + tuple(int(i) for i in np.unravel_index(miss.argmax(), miss.shape))
    # (iii) dual value equals the adversarial objective at (policy, reward)
    dual_value = float(dual_terms(mdp, r, demo, alpha)[0])
    phi = ail_value(demo, r, d, alpha)
    consistency = abs(dual_value - phi)
    # informational: primal minus dual value at the certified pair
    gap = primal_objective(mdp, result.policy, demo.occupancy, alpha) - dual_value
    checks = {"best_response": best_tv <= tv_tol, "box_argmax": worst_box <= box_tol,
              "value_consistency": consistency <= value_tol}
    failed = [k for k, v in checks.items() if not v]
    details = None
    if failed:
        details = f"failed: {', '.join(failed)}"
        if not checks["box_argmax"]:
            details += f"; reward off its bound at {where} by {worst_box:.3e}"
    metrics = {"best_response_tv": best_tv, "box_violation": worst_box,
               "value_mismatch": consistency, "duality_gap": gap, "dual_value": dual_value}
    metrics.update({f"pass_{k}": v for k, v in checks.items()})
    return CheckReport("thm2", not failed, metrics,
                       {"tv": tv_tol, "box": box_tol, "value": value_tol}, details)


# lemma1: structured saturation of the induced reward

def check_lemma1(mdp: LayeredMdp, demo: DemoDataset, q, cfg: SolverConfig | None = None,
                 tol: float = 1e-3) -> CheckReport:
    r = induced_reward(mdp, q).r
    min_top, max_off, where = math.inf, -math.inf, None
    for h, rh in enumerate(r):
        seen = demo.counts[h] > 0
        top = float(rh[seen].max())
        if top < min_top:
            min_top = top
            if top < 1.0 - tol:
                where = where or f"step {h}: best visited reward {top:.6f}"
        if (~seen).any():
            off = float(rh[~seen].max())
            if off > max_off:
                max_off = off
                if off > tol:
                    where = where or f"step {h}: unvisited reward {off:.6f}"
    if max_off == -math.inf:
        max_off = 0.0
    passed = min_top >= 1.0 - tol and max_off <= tol
    return CheckReport("lemma1", passed,
                       {"min_max_visited_reward": min_top, "max_unvisited_reward": max_off},
                       {"tol": tol}, None if passed else where)


# prop1: generalization at uncovered states of TD MDPs

def check_prop1(mdp: LayeredMdp, expert, demo: DemoDataset, cfg: SolverConfig | None = None,
                margin_tol: float = 1e-4, spread_tol: float = 1e-9,
                dual_result=None, iq_result=None) -> CheckReport:
    cfg = cfg or SolverConfig()
    report = is_td_mdp(mdp, expert)
    if not report.is_td:
        return CheckReport("prop1", False, {"is_td": False}, {},
                           f"precondition failed: not a TD MDP ({report.first_violation})")
    acts = expert_actions(expert)
    dual = dual_result if dual_result is not None else dual_qdm_exact(mdp, demo, cfg)
    iq = iq_result if iq_result is not None else iq_learn_fit(mdp, demo, "tv", cfg)
    min_gap, max_spread, count, where = math.inf, 0.0, 0, None
    for h in range(mdp.horizon - 1):
        for s in np.flatnonzero(~demo.visited_mask(h)):
            count += 1
            row = dual.q.q[h][s]
            ae = acts[h][s]
            if mdp.num_actions > 1:
                gap = float(row[ae] - np.delete(row, ae).max())
                if gap < min_gap:
                    min_gap = gap
                    if gap <= margin_tol:
                        where = where or f"dual gap {gap:.3e} at (h={h}, s={s})"
            qrow = iq.q.q[h][s]
            spread = float(qrow.max() - qrow.min())
            if spread > max_spread:
                max_spread = spread
                if spread > spread_tol:
                    where = where or f"IQ spread {spread:.3e} at (h={h}, s={s})"
    if min_gap == math.inf:
        min_gap = 0.0 if count == 0 or mdp.num_actions == 1 else min_gap
    passed = (count == 0 or mdp.num_actions == 1 or min_gap > margin_tol) and max_spread <= spread_tol
    return CheckReport("prop1", passed,
                       {"is_td": True, "uncovered_states": count, "min_dual_gap": min_gap,
                        "max_iq_spread": max_spread, "dual_converged": dual.converged},
                       {"margin": margin_tol, "spread": spread_tol}, None if passed else where)


# Dual Q-DM with penalties against the exact solver and against BC

def check_penalty(mdp: LayeredMdp, demo: DemoDataset, cfg: SolverConfig | None = None,
                  beta: float = 100.0, exact_tol: float = 0.05, bc_tol: float = 1e-2,
                  exact_result=None) -> CheckReport:
    cfg = cfg or SolverConfig()
    exact = exact_result if exact_result is not None else dual_qdm_exact(mdp, demo, cfg)
    pen = dual_qdm_penalty(mdp, demo, cfg.replace(beta=beta))
    free = dual_qdm_penalty(mdp, demo, cfg.replace(beta=0.0))
    tv_exact = max_policy_tv(pen.policy, exact.policy)
    tv_bc = max_policy_tv(free.policy, bc_fit(demo), start=1)
    passed = tv_exact <= exact_tol and tv_bc <= bc_tol
    return CheckReport("penalty", passed,
                       {"tv_to_exact": tv_exact, "tv_to_bc_later_steps": tv_bc,
                        "penalty_iters": pen.iters},
                       {"exact": exact_tol, "bc": bc_tol, "beta": beta},
                       None if passed else f"tv_to_exact={tv_exact:.3e}, tv_to_bc={tv_bc:.3e}")


# Finite-difference gradient checks

GRAD_OBJECTIVES = ("dual", "iq_tv", "iq_chi2")


def _objective_fns(objective: str, mdp: LayeredMdp, demo: DemoDataset, alpha: float):
    """(value at flat point in long double, analytic gradient at flat point)."""
    wide = mdp.astype(np.longdouble)
    sizes = mdp.layer_sizes

    if objective == "dual":
        def value(x):
            return dual_terms(wide, split_layers(x, sizes), demo, alpha, check_box=False)[0]

        def grad(x):
            return stack_layers(dual_terms(mdp, split_layers(x, sizes), demo, alpha,
                                           check_box=False)[1])
        return value, grad
    if objective in ("iq_tv", "iq_chi2"):
        variant = objective[3:]
        wide_obj = IqObjective(wide, demo, variant, alpha)
        obj = IqObjective(mdp, demo, variant, alpha)
        return (lambda x: wide_obj.value_and_grad(x)[0],
                lambda x: obj.value_and_grad(x)[1])
    raise ValueError(f"unknown objective {objective!r}; expected one of {GRAD_OBJECTIVES}")


def grad_check(objective: str, instance, cfg: SolverConfig | None = None, point=None,
               rng: np.random.Generator | None = None, step: float = 1e-6,
               rel_tol: float = 1e-5, floor: float = 1e-8) -> CheckReport:
    """Central differences (evaluated in long double) against the analytic gradient.

    ``instance`` is an (mdp, demo) pair; ``point`` is a flat (total_states, A)
    array (a random interior reward for "dual", a random Q otherwise).
    """
    cfg = cfg or SolverConfig()
    mdp, demo = instance
    rng = rng or np.random.default_rng(cfg.seed)
    shape = (mdp.num_states, mdp.num_actions)
    if point is None:
        point = rng.uniform(0.05, 0.95, shape) if objective == "dual" else rng.normal(0, 1, shape)
    point = np.asarray(point, dtype=np.float64)
    value, grad = _objective_fns(objective, mdp, demo, cfg.alpha)
    analytic = grad(point)
    x = point.astype(np.longdouble)
    fd = np.empty_like(point)
    for idx in np.ndindex(*shape):
        orig = x[idx]
        x[idx] = orig + step
        up = value(x)
        x[idx] = orig - step
        down = value(x)
        x[idx] = orig
        fd[idx] = float((up - down) / (2 * step))
    abs_err = np.abs(fd - analytic)
    rel_err = abs_err / np.maximum(np.abs(analytic), floor)
    worst = float(rel_err.max())
    passed = worst <= rel_tol
    where = tuple(int(i) for i in np.unravel_index(rel_err.argmax(), shape))
    return CheckReport(f"gradcheck_{objective}", passed,
                       {"max_rel_error": worst, "max_abs_error": float(abs_err.max())},
                       {"rel": rel_tol, "floor": floor, "step": step},
                       None if passed else f"worst entry (row, action)={where}")


def roundtrip_error(mdp: LayeredMdp, r, alpha: float = 1.0) -> float:
    """max |induced_reward(soft_value_iteration(r)) - r|."""
    q, _ = soft_value_iteration(mdp, r, alpha)
    back = induced_reward(mdp, q).r
    return max(float(np.max(np.abs(b - x))) for b, x in zip(back, r))
