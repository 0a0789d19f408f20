import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import ildm.verification as verification
from ildm.bench import BenchRow
from ildm.demos import DemoDataset
from ildm.instances import ResetCliffSpec, random_layered_mdp, reset_cliff
from ildm.mdp import (
    QTable, TabularPolicy, induced_reward, policy_return, soft_value_iteration, uniform_policy,
)
from ildm.solvers import SolveResult, SolverConfig, bc_fit, dual_qdm_exact, iq_learn_fit
from ildm.verification import (
    CheckReport, RegimeViolationError, UnconvergedInputError, bc_gap_closed_form,
    bc_gap_lower_bound, check_cor1, check_lemma1, check_penalty, check_prop1, check_thm1,
    check_thm2_saddle, cor1_metrics, grad_check, regime_ratio, roundtrip_error,
)

from conftest import small_case

D5_CFG = SolverConfig(alpha=0.1)


def fake_result(policy, q=None, method="fake"):
    return SolveResult(method, policy, q=q, converged=True)


# CheckReport

def test_report_is_plain_json():
    rep = CheckReport("x", np.bool_(True), {"b": np.float64(0.5), "a": np.int64(3)}, {"t": 1e-3})
    doc = rep.to_dict()
    assert list(doc["metrics"]) == ["a", "b"]
    assert json.loads(json.dumps(doc)) == doc


# thm1

def test_thm1_passes_on_random_instance():
    mdp, _, demo = small_case(11, sizes=(4, 3, 4), A=3, N=3)
    rep = check_thm1(mdp, demo, SolverConfig(learning_rate=0.5, max_iters=20_000))
    assert rep.passed, rep.details
    assert rep.metrics["max_tv_later_steps"] <= 1e-3


def test_thm1_negative_control():
    mdp, _, demo = small_case(11, sizes=(4, 3, 4), A=3, N=3)
    rep = check_thm1(mdp, demo, result=fake_result(uniform_policy(mdp)))
    assert not rep.passed and "differs from BC" in rep.details


def test_thm1_uniform_deviation_negative_control():
    mdp, _, demo = small_case(11, sizes=(4, 3, 4), A=3, N=1)
    bc = bc_fit(demo)
    probs = [p.copy() for p in bc.probs]
    probs[0][~demo.visited_mask(0)] = [0.5, 0.25, 0.25]
    rep = check_thm1(mdp, demo, result=fake_result(TabularPolicy(probs)))
    assert not rep.passed and "uniform" in rep.details


# cor1 oracles

def enumerated_bc_gap(spec):
    """Exact expected BC gap: enumerate every draw of the N demo states at each step."""
    mdp, expert = reset_cliff(spec)
    rho = mdp.initial
    good = np.flatnonzero(rho > 0)
    best = policy_return(mdp, expert)
    total = 0.0
    per_step = list(itertools.product(good, repeat=spec.N))
    for draws in itertools.product(per_step, repeat=spec.H):
        p = math.prod(rho[s] for step in draws for s in step)
        trajs = [[[draws[h][i], 0] for h in range(spec.H)] for i in range(spec.N)]
        demo = DemoDataset(trajs, mdp.layer_sizes, mdp.num_actions)
        total += p * (best - policy_return(mdp, bc_fit(demo)))
    return total


@pytest.mark.parametrize("S, A, H, N", [(3, 2, 3, 1), (4, 5, 3, 2), (4, 3, 2, 2), (3, 4, 4, 2)])
def test_closed_form_matches_enumeration(S, A, H, N):
    spec = ResetCliffSpec(S, A, H, N)
    assert bc_gap_closed_form(spec) == pytest.approx(enumerated_bc_gap(spec), rel=1e-12)


def test_closed_form_frozen_values():
    # values of the enumeration-checked formula at the sweep's configuration
    expected = {10: 8.209894060980119, 20: 18.187776686326725,
                40: 38.18750004223742, 80: 78.1875}
    for H, value in expected.items():
        assert bc_gap_closed_form(ResetCliffSpec(4, 5, H, 2)) == pytest.approx(value, rel=1e-12)


@given(st.integers(3, 8), st.integers(2, 6), st.integers(1, 60), st.integers(6, 40))
def test_lower_bound_below_closed_form(S, A, H, N):
    spec = ResetCliffSpec(S, A, H, N)
    assert bc_gap_lower_bound(spec) <= bc_gap_closed_form(spec) + 1e-12


def test_regime_ratio_guard():
    assert regime_ratio(ResetCliffSpec(4, 5, 80, 2)) > 1
    with pytest.raises(RegimeViolationError):
        check_cor1(4, 5, 2, horizons=(10, 80), seeds=range(2))


def synthetic_rows(gaps, S=4, A=5, N=2):
    """gaps: {(method, H): list of per-seed gaps}."""
    return [BenchRow(m, H, S, A, N, i, g, True, 0.0)
            for (m, H), values in gaps.items() for i, g in enumerate(values)]


def exact_rows(scale=None, noise=0.01, n=20):
    rng = np.random.default_rng(0)
    gaps = {}
    for H in (10, 20):
        cf = bc_gap_closed_form(ResetCliffSpec(4, 5, H, 2))
        centred = rng.normal(0, noise, n)
        centred -= centred.mean()
        gaps[("bc", H)] = list(cf + centred)
        gaps[("iq_tv", H)] = list(cf + centred)
        gaps[("value_dice", H)] = list(cf + centred)
        gaps[("dual_qdm_exact", H)] = [0.01 * cf] * n
    if scale:
        for key, factor in scale.items():
            gaps[key] = [g * factor for g in gaps[key]]
    return synthetic_rows(gaps)


def test_cor1_metrics_verdicts_and_negative_controls():
    overlap = ("iq_tv", "value_dice")
    _, verdict = cor1_metrics(exact_rows(), 4, 5, 2, (10, 20), overlap_methods=overlap)
    # N=2 doubling ratio is about 2.2, everything else holds
    assert verdict == {"closed_form": True, "doubling": False, "dual_small": True, "overlap": True}
    _, verdict = cor1_metrics(exact_rows({("bc", 10): 1.2}), 4, 5, 2, (10, 20), overlap_methods=overlap)
    assert not verdict["closed_form"]
    _, verdict = cor1_metrics(exact_rows({("value_dice", 20): 1.3}), 4, 5, 2, (10, 20),
                              overlap_methods=overlap)
    assert not verdict["overlap"] and verdict["closed_form"]
    _, verdict = cor1_metrics(exact_rows({("dual_qdm_exact", 20): 20.0}), 4, 5, 2, (10, 20))
    assert not verdict["dual_small"] and "overlap" not in verdict
    rows = exact_rows({("bc", 20): 4.0 * 8.209894060980119 / 18.187776686326725,
                       ("iq_tv", 20): 4.0 * 8.209894060980119 / 18.187776686326725})
    metrics, verdict = cor1_metrics(rows, 4, 5, 2, (10, 20))
    assert metrics["bc_ratio_H20_over_H10"] == pytest.approx(4.0)
    assert verdict["doubling"]


def test_check_cor1_on_precomputed_rows():
    rep = check_cor1(4, 5, 2, horizons=(10, 20), rows=exact_rows(), strict_regime=False,
                     overlap_methods=("iq_tv", "value_dice"))
    assert not rep.passed and rep.details == "failed: doubling"
    assert rep.metrics["pass_overlap"] is True


# thm2

def test_thm2_passes_on_d5(d5):
    mdp, _, demo = d5
    res = dual_qdm_exact(mdp, demo, D5_CFG)
    rep = check_thm2_saddle(mdp, demo, res, D5_CFG)
    assert rep.passed, rep.details
    # hand recursion at r = 1 on the demo pairs, 0 elsewhere, temperature 0.1
    top, low = 0.1 * math.log(math.exp(10) + 1), 0.1 * math.log(2)
    v_s1 = 0.1 * math.log(math.exp((1 + top) / 0.1) + math.exp(low / 0.1))
    v_s2 = 0.1 * math.log(math.exp(top / 0.1) + math.exp(low / 0.1))
    assert rep.metrics["dual_value"] == pytest.approx(2.0 - 0.5 * (v_s1 + v_s2), abs=1e-6)


def test_thm2_rejects_unconverged_input(d5):
    mdp, _, demo = d5
    res = dual_qdm_exact(mdp, demo, D5_CFG.replace(max_iters=2))
    with pytest.raises(UnconvergedInputError):
        check_thm2_saddle(mdp, demo, res, D5_CFG)


def test_thm2_negative_controls(d5):
    mdp, _, demo = d5
    res = dual_qdm_exact(mdp, demo, D5_CFG)
    # a reward pinned to one everywhere is neither the box argmax nor the right best response
    bad = SolveResult("dual_qdm_exact", res.policy, q=res.q, converged=True,
                      reward=type(res.reward)([np.ones((2, 2))] * 2))
    rep = check_thm2_saddle(mdp, demo, bad, D5_CFG)
    assert not rep.passed
    assert not rep.metrics["pass_best_response"] and not rep.metrics["pass_box_argmax"]
    # the right reward with a wrong policy fails the best response check
    wrong = SolveResult("dual_qdm_exact", uniform_policy(mdp), q=res.q, converged=True,
                        reward=res.reward)
    assert not check_thm2_saddle(mdp, demo, wrong, D5_CFG).metrics["pass_best_response"]


# lemma1 and prop1

def test_lemma1_on_d5(d5):
    mdp, _, demo = d5
    rep = check_lemma1(mdp, demo, dual_qdm_exact(mdp, demo, D5_CFG).q)
    assert rep.passed
    assert rep.metrics["min_max_visited_reward"] >= 0.999


def test_lemma1_negative_control(d5):
    mdp, _, demo = d5
    iq = iq_learn_fit(mdp, demo, "tv", D5_CFG.replace(max_iters=500))
    rep = check_lemma1(mdp, demo, iq.q)
    assert not rep.passed


def test_prop1_on_d5(d5):
    mdp, expert, demo = d5
    rep = check_prop1(mdp, expert, demo, D5_CFG)
    assert rep.passed, rep.details
    assert rep.metrics["min_dual_gap"] == pytest.approx(
        0.1 * math.log((math.exp(10) + 1) / 2), abs=1e-3)
    assert rep.metrics["max_iq_spread"] <= 1e-9


def test_prop1_precondition_negative_control():
    rng = np.random.default_rng(1)
    mdp, expert = random_layered_mdp([3, 3, 3], 3, rng, expert_kind="random")
    demo = DemoDataset([[[0, 0], [0, 0], [0, 0]]], mdp.layer_sizes, 3)
    rep = check_prop1(mdp, expert, demo)
    assert not rep.passed and rep.details.startswith("precondition failed")


def test_prop1_negative_controls(d5):
    mdp, expert, demo = d5
    dual = dual_qdm_exact(mdp, demo, D5_CFG)
    flat = SolveResult("dual_qdm_exact", dual.policy, q=type(dual.q)([np.zeros((2, 2))] * 2, 0.1))
    rep = check_prop1(mdp, expert, demo, D5_CFG, dual_result=flat)
    assert not rep.passed and "dual gap" in rep.details
    spread = SolveResult("iq_tv", dual.policy, q=dual.q)
    rep = check_prop1(mdp, expert, demo, D5_CFG, iq_result=spread)
    assert not rep.passed and "IQ spread" in rep.details


# penalty consistency

def test_penalty_check_on_d5(d5):
    mdp, _, demo = d5
    rep = check_penalty(mdp, demo, D5_CFG.replace(max_iters=5000))
    assert rep.passed, rep.details


def test_penalty_negative_control(d5):
    mdp, _, demo = d5
    rep = check_penalty(mdp, demo, D5_CFG.replace(max_iters=200),
                        exact_result=fake_result(uniform_policy(mdp)))
    assert not rep.passed and rep.metrics["tv_to_exact"] > 0.4


# gradient checks

@pytest.mark.parametrize("objective", ["dual", "iq_tv", "iq_chi2"])
def test_grad_check_passes(objective):
    mdp, _, demo = small_case(2)
    rep = grad_check(objective, (mdp, demo), SolverConfig(alpha=0.3), rng=np.random.default_rng(1))
    assert rep.passed, rep.details
    assert rep.metrics["max_rel_error"] <= 1e-5


@pytest.mark.parametrize("objective", ["dual", "iq_tv"])
def test_grad_check_negative_control(objective, monkeypatch):
    original = verification._objective_fns

    def skewed(*args):
        value, grad = original(*args)
        return value, lambda x: grad(x) * 1.001

    monkeypatch.setattr(verification, "_objective_fns", skewed)
    mdp, _, demo = small_case(2)
    rep = grad_check(objective, (mdp, demo), rng=np.random.default_rng(1))
    assert not rep.passed and "worst entry" in rep.details


def test_grad_check_unknown_objective(d5):
    with pytest.raises(ValueError):
        grad_check("value_dice", d5[::2])


def test_roundtrip_error_small_and_detects_mismatch(small):
    mdp = small[0]
    rng = np.random.default_rng(0)
    r = [rng.random((S, 2)) for S in mdp.layer_sizes]
    assert roundtrip_error(mdp, r, 0.2) <= 1e-10
    # negative control: a mismatched temperature between the two directions
    q, _ = soft_value_iteration(mdp, r, 0.2)
    back = induced_reward(mdp, QTable(q.q, 0.4)).r
    assert max(np.max(np.abs(a - b)) for a, b in zip(back, r)) > 1e-3
