"""Horizon sweeps that measure exact imitation gaps per (method, H, seed)."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .demos import collect_demos
from .instances import ResetCliffSpec, example_d5, random_layered_mdp, reset_cliff
from .mdp import policy_return
from .solvers import METHODS, SolverConfig, solve

CSV_COLUMNS = ("method", "H", "S", "A", "N", "seed", "gap", "converged", "wall_time_ms")
SUMMARY_COLUMNS = ("method", "H", "n", "mean_gap", "se_gap")
INSTANCE_KINDS = ("reset_cliff", "d5", "random")


@dataclass(frozen=True)
class BenchConfig:
    methods: tuple = ("bc",)
    instance: str = "reset_cliff"
    S: int = 4
    A: int = 5
    N: int = 2
    horizons: tuple = (10,)
    seeds: tuple = (0,)
    base_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    overrides: dict = field(default_factory=dict)  # method -> SolverConfig
    out: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
        if self.instance not in INSTANCE_KINDS:
            raise ValueError(f"unknown instance {self.instance!r}; expected one of {INSTANCE_KINDS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.horizons or any(int(h) < 1 for h in self.horizons):
            raise ValueError("horizons must be positive")

    def solver_for(self, method: str) -> SolverConfig:
        return self.overrides.get(method, self.solver)


@dataclass(frozen=True)
class BenchRow:
    method: str
    H: int
    S: int
    A: int
    N: int
    seed: int
    gap: float
    converged: bool | str
    wall_time_ms: float

    def csv_fields(self) -> list:
        conv = self.converged if isinstance(self.converged, str) else str(bool(self.converged)).lower()
        return [self.method, self.H, self.S, self.A, self.N, self.seed,
                repr(float(self.gap)), conv, f"{self.wall_time_ms:.3f}"]


def cell_rng(base_seed: int, H: int, seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for one sweep cell: SeedSequence(base_seed) spawned at key (H, seed, stream)."""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(H, seed, stream)))


def cell_seed(base_seed: int, H: int, seed: int, stream: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(H, seed, stream))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def build_instance(cfg: BenchConfig, H: int, seed: int):
    """(mdp, expert, demo, S) for one cell; the demo is shared by all methods."""
    if cfg.instance == "reset_cliff":
        mdp, expert = reset_cliff(ResetCliffSpec(cfg.S, cfg.A, H, cfg.N))
        demo = collect_demos(mdp, expert, cfg.N, cell_rng(cfg.base_seed, H, seed), seed=seed)
        return mdp, expert, demo, cfg.S
    if cfg.instance == "d5":
        mdp, expert, demo = example_d5()
        return mdp, expert, demo, max(mdp.layer_sizes)
    rng = cell_rng(cfg.base_seed, H, seed)
    mdp, expert = random_layered_mdp([cfg.S] * H, cfg.A, rng)
    demo = collect_demos(mdp, expert, cfg.N, rng, seed=seed)
    return mdp, expert, demo, cfg.S


def run_cell(cfg: BenchConfig, H: int, seed: int) -> list:
    mdp, expert, demo, S = build_instance(cfg, H, seed)
    expert_value = policy_return(mdp, expert)
    rows = []
    for m in cfg.methods:
        scfg = cfg.solver_for(m).replace(seed=cell_seed(cfg.base_seed, H, seed, 1 + METHODS.index(m)))
        start = time.perf_counter()
        try:
            res = solve(m, mdp, demo, scfg)
            gap = expert_value - policy_return(mdp, res.policy)
            conv: bool | str = res.converged
        except Exception as exc:  # recorded in the row; the sweep continues
            gap, conv = float("nan"), f"error:{type(exc).__name__}"
        ms = 1000.0 * (time.perf_counter() - start)
        rows.append(BenchRow(m, mdp.horizon, S, mdp.num_actions, demo.num_trajectories,
                             seed, float(gap), conv, ms))
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def thread_cap() -> int:
    raw = os.environ.get("ILDM_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_bench(cfg: BenchConfig, threads: int | None = None) -> list:
    cells = [(cfg, int(H), int(s)) for H in cfg.horizons for s in cfg.seeds]
    if cfg.instance == "d5":
        cells = [(cfg, 2, int(s)) for s in cfg.seeds]
    workers = min(threads or thread_cap(), len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell_args, cells))
    else:
        chunks = [run_cell(*c) for c in cells]
    order = {m: i for i, m in enumerate(cfg.methods)}
    rows = [r for chunk in chunks for r in chunk]
    return sorted(rows, key=lambda r: (order[r.method], r.H, r.seed))


def rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def summarize(rows) -> list:
    """(method, H, n, mean, standard error) per group, in row order."""
    groups: dict = {}
    for r in rows:
        if math.isfinite(r.gap):
            groups.setdefault((r.method, r.H), []).append(r.gap)
    out = []
    for (m, H), gaps in groups.items():
        g = np.asarray(gaps)
        se = float(g.std(ddof=1) / math.sqrt(g.size)) if g.size > 1 else 0.0
        out.append((m, H, int(g.size), float(g.mean()), se))
    return out


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for m, H, n, mean, se in summarize(rows):
        w.writerow([m, H, n, repr(mean), repr(se)])
    return buf.getvalue()


def strip_wall_time(text: str) -> str:
    """CSV text with the wall_time_ms column removed (for determinism checks)."""
    idx = CSV_COLUMNS.index("wall_time_ms")
    return "\n".join(",".join(row[:idx] + row[idx + 1:]) for row in csv.reader(io.StringIO(text)))
