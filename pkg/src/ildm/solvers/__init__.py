"""The learners: BC, IQ-Learn variants, ValueDICE, Dual Q-DM (exact and penalized), AIL."""
from __future__ import annotations

from .base import DivergenceError, SolveResult, SolverConfig
from .bc import bc_fit, bc_log_likelihood, bc_solve
from .dual import ail_fit, ail_value, dual_qdm_exact
from .iq_learn import IqObjective, iq_gradient, iq_learn_fit, iq_objective
from .penalty import dual_qdm_penalty
from .value_dice import value_dice_fit, value_dice_objective

METHODS = ("bc", "iq_tv", "iq_chi2", "iq_reg", "value_dice",
           "dual_qdm_exact", "dual_qdm_penalty", "ail")


def solve(method: str, mdp, demo, cfg: SolverConfig | None = None) -> SolveResult:
    cfg = cfg or SolverConfig()
    if method == "bc":
        return bc_solve(mdp, demo, cfg)
    if method in ("iq_tv", "iq_chi2", "iq_reg"):
        return iq_learn_fit(mdp, demo, method[3:], cfg)
    if method == "value_dice":
        return value_dice_fit(mdp, demo, cfg)
    if method == "dual_qdm_exact":
        return dual_qdm_exact(mdp, demo, cfg)
    if method == "dual_qdm_penalty":
        return dual_qdm_penalty(mdp, demo, cfg)
    if method == "ail":
        return ail_fit(mdp, demo, cfg)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


__all__ = [
    "METHODS", "DivergenceError", "IqObjective", "SolveResult", "SolverConfig",
    "ail_fit", "ail_value", "bc_fit", "bc_log_likelihood", "bc_solve", "dual_qdm_exact",
    "dual_qdm_penalty", "iq_gradient", "iq_learn_fit", "iq_objective", "solve",
    "value_dice_fit", "value_dice_objective",
]
