"""Solver configuration, results, and the flat Q-table layout shared by learners."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..mdp import LayeredMdp, QTable, RewardTable, TabularPolicy, split_layers, stack_layers

REWARD_STEP = 0.5
Q_STEP = 0.1
EXACT_TOL = 1e-8
PENALTY_TOL = 1e-5


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters shared by all learners.

    ``learning_rate`` and ``grad_tol`` of None pick the method default:
    0.5 for reward-space ascent, 0.1 for Q-space ascent; tolerance 1e-8 for
    the exact solvers and 1e-5 for the penalty solver.
    ``argmax_ties`` selects how ValueDICE's greedy policy breaks ties:
    "uniform" spreads mass over the argmax set, "lowest" takes the lowest index.
    """

    alpha: float = 1.0
    learning_rate: float | None = None
    max_iters: int = 50_000
    grad_tol: float | None = None
    beta: float = 100.0
    polyak_tau: float = 0.05
    online_rollouts_per_iter: int = 1
    seed: int = 0
    q_init: float = 0.0
    q_box_C: float | None = None
    argmax_ties: str = "uniform"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be non-negative, got {self.max_iters}")
        if self.grad_tol is not None and self.grad_tol < 0:
            raise ValueError(f"grad_tol must be non-negative, got {self.grad_tol}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not 0 < self.polyak_tau <= 1:
            raise ValueError(f"polyak_tau must lie in (0, 1], got {self.polyak_tau}")
        if self.online_rollouts_per_iter < 1:
            raise ValueError("online_rollouts_per_iter must be at least 1")
        if self.q_box_C is not None and not self.q_box_C > 0:
            raise ValueError(f"q_box_C must be positive, got {self.q_box_C}")
        if self.argmax_ties not in ("uniform", "lowest"):
            raise ValueError(f"argmax_ties must be 'uniform' or 'lowest', got {self.argmax_ties!r}")

    def step(self, default: float) -> float:
        return default if self.learning_rate is None else self.learning_rate

    def tol(self, default: float) -> float:
        return default if self.grad_tol is None else self.grad_tol

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "SolverConfig":
        """Build from string or typed values (config files, CLI flags)."""
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in data.items():
            if key not in kinds:
                raise ValueError(f"unknown solver option {key!r}")
            if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
                out[key] = None
                continue
            kind = kinds[key]
            if "int" in kind:
                out[key] = int(raw)
            elif "float" in kind:
                out[key] = float(raw)
            else:
                out[key] = str(raw).strip()
        return cls(**out)


@dataclass
class SolveResult:
    method: str
    policy: TabularPolicy
    q: QTable | None = None
    reward: RewardTable | None = None
    loss_trace: list = field(default_factory=list)  # (iter, objective, grad_norm)
    converged: bool = False
    iters: int = 0
    config: SolverConfig | None = None
    final_objective: float = float("nan")
    grad_tol: float = 0.0

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "config": None if self.config is None else self.config.to_dict(),
            "converged": bool(self.converged),
            "iters": int(self.iters),
            "final_objective": float(self.final_objective),
            "policy": [p.tolist() for p in self.policy.probs],
        }
        if self.reward is not None:
            out["reward"] = [r.tolist() for r in self.reward.r]
        if self.q is not None:
            out["q"] = [x.tolist() for x in self.q.q]
        return out

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "objective", "grad_norm"])
        for it, obj, g in self.loss_trace:
            w.writerow([int(it), repr(float(obj)), repr(float(g))])
        return buf.getvalue()


class FlatLayout:
    """Stacked (total_states, A) view of per-layer tables."""

    def __init__(self, mdp: LayeredMdp):
        self.mdp = mdp
        self.layer_sizes = mdp.layer_sizes
        self.num_actions = mdp.num_actions
        self.num_states = mdp.num_states
        self.offsets = mdp.offsets
        self.first = slice(0, mdp.layer_sizes[0])

    def stack(self, tables) -> np.ndarray:
        return stack_layers(tables)

    def split(self, flat: np.ndarray) -> tuple:
        return split_layers(flat, self.layer_sizes)

    def full(self, value: float) -> np.ndarray:
        return np.full((self.num_states, self.num_actions), float(value))


def check_finite(value, arr: np.ndarray, method: str, it: int) -> None:
    if not np.isfinite(value) or not np.all(np.isfinite(arr)):
        raise DivergenceError(f"{method}: non-finite objective or iterate at iteration {it}")
