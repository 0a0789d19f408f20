"""Default instance families for each verification suite.

Each suite returns a list of (instance label, CheckReport).  Instances are
drawn from SeedSequence(seed, spawn_key=(suite id, index)) so a suite run is
reproducible from its seed alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bench import BenchConfig, run_bench
from .demos import collect_demos
from .instances import (
    ResetCliffSpec, example_d5, random_layered_mdp, random_td_mdp, reset_cliff,
)
from .solvers import SolverConfig, dual_qdm_exact, iq_learn_fit
from .verification import (
    CheckReport, check_cor1, check_lemma1, check_penalty, check_prop1, check_thm1,
    check_thm2_saddle, grad_check, roundtrip_error,
)

SUITES = ("thm1", "cor1", "thm2", "lemma1", "prop1", "gradcheck", "penalty", "roundtrip")
SUITE_IDS = {name: i for i, name in enumerate(SUITES)}
D5_ALPHA = 0.1


@dataclass(frozen=True)
class VerifyConfig:
    seed: int = 0
    instances: int = 10
    points: int = 20
    # thm1 needs many ascent steps: the BC optimum sits at infinite Q
    thm1_solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(learning_rate=0.5, max_iters=20_000))
    solver: SolverConfig = field(default_factory=SolverConfig)
    # IQ runs inside prop1 only need the zero-gradient rows, which never move
    prop1_iq_iters: int = 2000
    cor1_S: int = 4
    cor1_A: int = 5
    # the Reset Cliff sweep setting; eps*H/2 exceeds 1 there, so the regime guard is off
    cor1_N: int = 2
    cor1_strict: bool = False
    cor1_methods: tuple = ("bc", "iq_tv", "dual_qdm_exact", "ail")
    cor1_overlap: tuple = ("iq_tv", "value_dice")
    cor1_horizons: tuple = (10, 20, 40, 80)
    cor1_seeds: tuple = tuple(range(100))
    cor1_alpha: float = 0.1
    cor1_iters: dict = field(default_factory=lambda: {
        "iq_tv": 2000, "value_dice": 2000, "dual_qdm_exact": 50, "ail": 50})
    penalty_beta: float = 100.0
    overrides: dict = field(default_factory=dict)  # solver fields set by the user

    def apply(self, cfg: SolverConfig) -> SolverConfig:
        return cfg.replace(**self.overrides) if self.overrides else cfg

    def replace(self, **changes) -> "VerifyConfig":
        return replace(self, **changes)


def suite_rng(seed: int, suite: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SUITE_IDS[suite], index)))


def _random_case(rng, max_states, max_actions, max_h, N, min_states=1):
    H = int(rng.integers(2, max_h + 1))
    sizes = [int(x) for x in rng.integers(min_states, max_states + 1, size=H)]
    A = int(rng.integers(2, max_actions + 1))
    mdp, expert = random_layered_mdp(sizes, A, rng, expert_kind="random")
    return mdp, expert, collect_demos(mdp, expert, N, rng)


def _td_case(rng):
    H = int(rng.integers(2, 5))
    sizes = [int(x) for x in rng.integers(2, 5, size=H)]
    A = int(rng.integers(2, 4))
    mdp, expert = random_td_mdp(sizes, A, rng)
    return mdp, expert, collect_demos(mdp, expert, 1, rng)


def _d5_cfg(vc: VerifyConfig, base: SolverConfig) -> SolverConfig:
    return vc.apply(base.replace(alpha=D5_ALPHA))


def thm1_instances(vc: VerifyConfig):
    out = []
    for i in range(vc.instances):
        rng = suite_rng(vc.seed, "thm1", i)
        out.append((f"random-{i}",) + _random_case(rng, 6, 4, 5, 3))
    spec = ResetCliffSpec(5, 5, 10, 2)
    mdp, expert = reset_cliff(spec)
    demo = collect_demos(mdp, expert, spec.N, suite_rng(vc.seed, "thm1", vc.instances))
    out.append(("reset_cliff-5-5-10-2", mdp, expert, demo))
    return out


def thm2_instances(vc: VerifyConfig):
    mdp, expert, demo = example_d5()
    out = [("d5", mdp, expert, demo)]
    for i in range(vc.instances):
        out.append((f"random-{i}",) + _random_case(suite_rng(vc.seed, "thm2", i), 4, 3, 4, 3))
    return out


def td_instances(vc: VerifyConfig, suite: str):
    mdp, expert, demo = example_d5()
    out = [("d5", mdp, expert, demo)]
    for i in range(vc.instances):
        out.append((f"td-{i}",) + _td_case(suite_rng(vc.seed, suite, i)))
    return out


def _alpha_cfg(vc: VerifyConfig, label: str, base: SolverConfig) -> SolverConfig:
    return _d5_cfg(vc, base) if label == "d5" else vc.apply(base)


def run_thm1(vc: VerifyConfig, cases=None):
    cases = cases if cases is not None else thm1_instances(vc)
    return [(label, check_thm1(mdp, demo, vc.apply(vc.thm1_solver)))
            for label, mdp, _, demo in cases]


def run_thm2(vc: VerifyConfig, cases=None):
    out = []
    for label, mdp, _, demo in (cases if cases is not None else thm2_instances(vc)):
        cfg = _alpha_cfg(vc, label, vc.solver)
        res = dual_qdm_exact(mdp, demo, cfg)
        if not res.converged:
            out.append((label, CheckReport("thm2", False, {"iters": res.iters}, {},
                                           "dual solver did not converge")))
            continue
        out.append((label, check_thm2_saddle(mdp, demo, res, cfg)))
    return out


def run_lemma1(vc: VerifyConfig, cases=None):
    out = []
    for label, mdp, _, demo in (cases if cases is not None else td_instances(vc, "lemma1")):
        cfg = _alpha_cfg(vc, label, vc.solver)
        res = dual_qdm_exact(mdp, demo, cfg)
        out.append((label, check_lemma1(mdp, demo, res.q, cfg)))
    return out


def run_prop1(vc: VerifyConfig, cases=None):
    out = []
    for label, mdp, expert, demo in (cases if cases is not None else td_instances(vc, "prop1")):
        cfg = _alpha_cfg(vc, label, vc.solver)
        iq_cfg = cfg.replace(max_iters=min(cfg.max_iters, vc.prop1_iq_iters))
        try:
            iq = iq_learn_fit(mdp, demo, "tv", iq_cfg)
        except Exception as exc:  # reported, not raised: the suite keeps going
            out.append((label, CheckReport("prop1", False, {}, {}, f"IQ-Learn failed: {exc}")))
            continue
        out.append((label, check_prop1(mdp, expert, demo, cfg, iq_result=iq)))
    return out


def run_penalty(vc: VerifyConfig, cases=None):
    out = []
    if cases is None:
        mdp, expert, demo = example_d5()
        cases = [("d5", mdp, expert, demo)]
    for label, mdp, _, demo in cases:
        cfg = _alpha_cfg(vc, label, vc.solver)
        out.append((label, check_penalty(mdp, demo, cfg, beta=vc.penalty_beta)))
    return out


def run_gradcheck(vc: VerifyConfig, cases=None):
    out = []
    for objective in ("dual", "iq_tv", "iq_chi2"):
        if cases is not None:
            for label, mdp, _, demo in cases:
                cfg = _alpha_cfg(vc, label, vc.solver)
                for i in range(vc.points):
                    rng = suite_rng(vc.seed, "gradcheck", i)
                    out.append((f"{label}-{objective}-{i}",
                                grad_check(objective, (mdp, demo), cfg, rng=rng)))
            continue
        for i in range(vc.points):
            rng = suite_rng(vc.seed, "gradcheck", 1000 * ("dual", "iq_tv", "iq_chi2").index(objective) + i)
            mdp, _, demo = _random_case(rng, 4, 3, 4, 3)
            out.append((f"{objective}-{i}", grad_check(objective, (mdp, demo), vc.apply(vc.solver),
                                                       rng=rng)))
    return out


def run_roundtrip(vc: VerifyConfig, cases=None, tol: float = 1e-10):
    out = []
    if cases is None:
        cases = []
        for i in range(vc.points):
            rng = suite_rng(vc.seed, "roundtrip", i)
            mdp, expert, demo = _random_case(rng, 5, 4, 5, 1)
            cases.append((f"random-{i}", mdp, expert, demo))
    for i, (label, mdp, _, _) in enumerate(cases):
        rng = suite_rng(vc.seed, "roundtrip", 10_000 + i)
        r = [rng.random((S, mdp.num_actions)) for S in mdp.layer_sizes]
        alpha = vc.apply(vc.solver).alpha
        err = roundtrip_error(mdp, r, alpha)
        out.append((label, CheckReport("roundtrip", err <= tol, {"max_error": err}, {"tol": tol},
                                       None if err <= tol else f"round-trip error {err:.3e}")))
    return out


def cor1_bench_config(vc: VerifyConfig) -> BenchConfig:
    """The Reset Cliff sweep behind the cor1 suite."""
    base = vc.apply(vc.solver.replace(alpha=vc.cor1_alpha))
    methods = tuple(vc.cor1_methods) + tuple(m for m in vc.cor1_overlap
                                             if m not in vc.cor1_methods)
    overrides = {m: base.replace(max_iters=vc.cor1_iters[m]) if m in vc.cor1_iters else base
                 for m in methods}
    return BenchConfig(methods=methods, instance="reset_cliff", S=vc.cor1_S, A=vc.cor1_A,
                       N=vc.cor1_N, horizons=tuple(vc.cor1_horizons), seeds=tuple(vc.cor1_seeds),
                       base_seed=vc.seed, solver=base, overrides=overrides)


def run_cor1(vc: VerifyConfig, threads=None, rows=None):
    bench = cor1_bench_config(vc)
    rows = rows if rows is not None else run_bench(bench, threads)
    report = check_cor1(vc.cor1_S, vc.cor1_A, vc.cor1_N, vc.cor1_horizons, vc.cor1_seeds,
                        methods=bench.methods, overlap_methods=vc.cor1_overlap,
                        strict_regime=vc.cor1_strict, rows=rows)
    return [(f"reset_cliff-{vc.cor1_S}-{vc.cor1_A}-N{vc.cor1_N}", report)]


RUNNERS = {
    "thm1": run_thm1, "thm2": run_thm2, "lemma1": run_lemma1, "prop1": run_prop1,
    "gradcheck": run_gradcheck, "penalty": run_penalty, "roundtrip": run_roundtrip,
}


def run_suite(name: str, vc: VerifyConfig | None = None, cases=None, threads=None):
    vc = vc or VerifyConfig()
    if name == "cor1":
        if cases is not None:
            raise ValueError("cor1 builds its own Reset Cliff sweep; instance files do not apply")
        return run_cor1(vc, threads)
    if name not in RUNNERS:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES + ('all',)}")
    return RUNNERS[name](vc, cases)


def suite_document(name: str, results) -> dict:
    return {
        "suite": name,
        "passed": all(r.passed for _, r in results),
        "checks": [dict(instance=label, **r.to_dict()) for label, r in results],
    }
