"""Command-line entry point: ildm gen | solve | bench | verify.

Configuration comes from an INI file (--config) with sections [instance],
[bench], [solver], [solver.<method>] and [verify]; command-line flags win.
Exit status 2 means a usage problem (bad flags, malformed config, missing or
invalid files); 1 means a verification check failed.
"""
from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from .bench import INSTANCE_KINDS, BenchConfig, rows_csv, run_bench, summary_csv
from .demos import collect_demos
from .instances import (
    ResetCliffSpec, SpecError, example_d5, is_td_mdp, random_layered_mdp, random_td_mdp,
    reset_cliff,
)
from .mdp import policy_return
from .serialization import (
    ArtifactError, dumps, load_demos, load_mdp, load_policy, save_demos, save_json, save_mdp,
    save_policy,
)
from .solvers import METHODS, SolverConfig, solve
from .suites import SUITES, VerifyConfig, run_suite, suite_document


class UsageError(Exception):
    pass


# config parsing

def parse_int_list(text: str) -> tuple:
    """'10, 20, 40' or '0-99' (inclusive range) or a mix of both."""
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, "")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError(f"empty list {text!r}")
    return tuple(out)


def parse_name_list(text: str) -> tuple:
    return tuple(p.strip() for p in str(text).split(",") if p.strip())


def read_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is None:
        return parser
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{path}: no such config file")
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"{path}: malformed config: {exc}".splitlines()[0]) from None
    known = {"instance", "bench", "solver", "verify"}
    for section in parser.sections():
        if section not in known and not section.startswith("solver."):
            raise UsageError(f"{path}: unknown section [{section}]")
    return parser


def solver_options(parser, section: str) -> dict:
    return dict(parser[section]) if parser.has_section(section) else {}


def build_solver(parser, method: str | None = None, flags: dict | None = None) -> SolverConfig:
    opts = solver_options(parser, "solver")
    if method is not None:
        opts.update(solver_options(parser, f"solver.{method}"))
    opts.update(flags or {})
    try:
        return SolverConfig.from_mapping(opts)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"solver config: {exc}") from None


def _get(parser, section, key, convert, default):
    if parser.has_section(section) and key in parser[section]:
        raw = parser[section][key]
        try:
            return convert(raw)
        except ValueError:
            raise UsageError(f"[{section}] {key} = {raw!r} is not valid") from None
    return default


def solver_flags(args) -> dict:
    flags = {}
    if getattr(args, "tol", None) is not None:
        flags["grad_tol"] = args.tol
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        flags[key.strip()] = value.strip()
    return flags


# gen

def cmd_gen(args) -> int:
    out = Path(args.out or ".")
    rng = np.random.default_rng(args.seed)
    demo_n = args.N
    if args.kind == "reset-cliff":
        try:
            spec = ResetCliffSpec(args.S, args.A, args.H, args.N)
        except SpecError as exc:
            raise UsageError(str(exc)) from None
        mdp, expert = reset_cliff(spec)
    elif args.kind == "d5":
        mdp, expert, demo = example_d5()
    else:
        sizes = parse_int_list(args.layers) if args.layers else (args.S,) * args.H
        if args.reject_until_td:
            mdp, expert = random_td_mdp(sizes, args.A, rng, expert_kind=args.expert)
        else:
            mdp, expert = random_layered_mdp(sizes, args.A, rng, expert_kind=args.expert)
    if args.kind != "d5":
        meta = dict(mdp.metadata, seed=args.seed)
        mdp = type(mdp)(mdp.layer_sizes, mdp.num_actions, mdp.initial, mdp.transitions,
                        mdp.reward, meta)
        demo = collect_demos(mdp, expert, demo_n, rng, seed=args.seed) if demo_n else None
    files = [save_mdp(out / "mdp.json", mdp), save_policy(out / "expert.json", expert)]
    if demo is not None:
        files.append(save_demos(out / "demos.json", demo))
    td = is_td_mdp(mdp, expert).is_td
    print(f"wrote {', '.join(str(f) for f in files)} (hash={mdp.content_hash()}, td={str(td).lower()})")
    return 0


# solve

def cmd_solve(args) -> int:
    parser = read_config(args.config)
    mdp = load_mdp(args.mdp)
    demo = load_demos(args.demos, mdp)
    flags = solver_flags(args)
    if args.seed is not None:
        flags["seed"] = args.seed
    cfg = build_solver(parser, args.method, flags)
    if "alpha" not in flags and not _has_key(parser, args.method, "alpha") \
            and "alpha" in mdp.metadata:
        cfg = cfg.replace(alpha=float(mdp.metadata["alpha"]))
    result = solve(args.method, mdp, demo, cfg)
    doc = result.to_dict()
    value = policy_return(mdp, result.policy)
    doc["return"] = value
    line = (f"method={result.method} iters={result.iters} converged={str(result.converged).lower()} "
            f"objective={result.final_objective:.10g} return={value:.10g}")
    if args.expert:
        expert = load_policy(args.expert, mdp)
        doc["gap"] = policy_return(mdp, expert) - value
        line += f" gap={doc['gap']:.10g}"
    if args.out:
        save_json(args.out, doc)
    if args.trace:
        Path(args.trace).write_text(result.trace_csv())
    print(line)
    return 0


def _has_key(parser, method, key) -> bool:
    return any(parser.has_section(s) and key in parser[s] for s in ("solver", f"solver.{method}"))


# bench

def bench_config(parser, args) -> BenchConfig:
    instance = _get(parser, "instance", "kind", str, "reset_cliff").replace("-", "_")
    if instance not in INSTANCE_KINDS:
        raise UsageError(f"[instance] kind must be one of {INSTANCE_KINDS}, got {instance!r}")
    methods = _get(parser, "bench", "methods", parse_name_list, ("bc",))
    if args.methods:
        methods = parse_name_list(args.methods)
    horizons = _get(parser, "bench", "horizons", parse_int_list, (10,))
    if args.horizons:
        horizons = parse_int_list(args.horizons)
    seeds = _get(parser, "bench", "seeds", parse_int_list, (0,))
    base_seed = _get(parser, "bench", "base_seed", int, 0)
    if args.seed is not None:
        base_seed = args.seed
    flags = solver_flags(args)
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; expected one of {METHODS}")
    overrides = {m: build_solver(parser, m, flags) for m in methods}
    try:
        return BenchConfig(
            methods=tuple(methods), instance=instance,
            S=_get(parser, "instance", "S", int, 4), A=_get(parser, "instance", "A", int, 5),
            N=_get(parser, "instance", "N", int, 2), horizons=tuple(horizons),
            seeds=tuple(seeds), base_seed=base_seed, solver=build_solver(parser, None, flags),
            overrides=overrides, out=args.out or _get(parser, "bench", "out", str, None))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_bench(args) -> int:
    parser = read_config(args.config)
    cfg = bench_config(parser, args)
    rows = run_bench(cfg, args.threads)
    text = rows_csv(rows)
    summary = summary_csv(rows)
    if cfg.out:
        out = Path(cfg.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        summary_path = out.with_name(out.stem + "_summary.csv")
        summary_path.write_text(summary)
        print(f"wrote {len(rows)} rows to {out} and summary to {summary_path}")
        sys.stdout.write(summary)
    else:
        sys.stdout.write(text)
    return 0


# verify

def verify_config(parser, args) -> VerifyConfig:
    vc = VerifyConfig()
    changes = {}
    for key, convert in (("seed", int), ("instances", int), ("points", int),
                         ("prop1_iq_iters", int), ("cor1_S", int), ("cor1_A", int),
                         ("cor1_N", int), ("cor1_alpha", float), ("penalty_beta", float)):
        value = _get(parser, "verify", key, convert, None)
        if value is not None:
            changes[key] = value
    for key in ("cor1_horizons", "cor1_seeds"):
        value = _get(parser, "verify", key, parse_int_list, None)
        if value is not None:
            changes[key] = value
    if args.horizons:
        changes["cor1_horizons"] = parse_int_list(args.horizons)
    if args.seed is not None:
        changes["seed"] = args.seed
    user = solver_options(parser, "solver")
    user.update(solver_flags(args))
    if user:
        try:
            typed = SolverConfig.from_mapping(user)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"solver config: {exc}") from None
        changes["overrides"] = {k: getattr(typed, k) for k in user}
    try:
        return vc.replace(**changes)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _instance_cases(args):
    if not args.mdp:
        return None
    if not args.demos:
        raise UsageError("--mdp needs --demos")
    mdp = load_mdp(args.mdp)
    demo = load_demos(args.demos, mdp)
    expert = load_policy(args.expert, mdp) if args.expert else None
    label = "d5" if mdp.metadata.get("kind") == "d5" else Path(args.mdp).stem
    return [(label, mdp, expert, demo)]


def cmd_verify(args) -> int:
    parser = read_config(args.config)
    vc = verify_config(parser, args)
    cases = _instance_cases(args)
    if args.suite == "prop1" and cases is not None and cases[0][2] is None:
        raise UsageError("prop1 on an instance file needs --expert")
    names = [s for s in SUITES if s != "cor1"] if args.suite == "all" and cases else (
        list(SUITES) if args.suite == "all" else [args.suite])
    docs = []
    for name in names:
        if name == "prop1" and cases is not None and cases[0][2] is None:
            continue
        results = run_suite(name, vc, cases, threads=args.threads)
        doc = suite_document(name, results)
        docs.append(doc)
        for label, rep in results:
            status = "PASS" if rep.passed else "FAIL"
            extra = f" ({rep.details})" if rep.details else ""
            print(f"{status} {name} {label}{extra}")
    passed = all(d["passed"] for d in docs)
    report = {"passed": passed, "suites": docs}
    if args.out:
        save_json(args.out, report)
    print(f"verify {args.suite}: {'passed' if passed else 'FAILED'}")
    return 0 if passed else 1


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ildm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_help="random seed"):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int, help=seed_help)

    g = sub.add_parser("gen", help="generate an instance (mdp.json, expert.json, demos.json)")
    g.add_argument("kind", choices=("reset-cliff", "d5", "random"))
    g.add_argument("--S", type=int, default=4, help="states per layer")
    g.add_argument("--A", type=int, default=5, help="actions")
    g.add_argument("--H", type=int, default=10, help="horizon")
    g.add_argument("--N", type=int, help="demo trajectories (Reset Cliff: also sets rho)")
    g.add_argument("--layers", help="comma-separated layer sizes (random only)")
    g.add_argument("--expert", default="zero", choices=("zero", "random"),
                   help="expert actions for random instances")
    g.add_argument("--reject-until-td", action="store_true",
                   help="rejection-sample random instances until they are TD")
    g.add_argument("--out", help="output directory (default: current directory)")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="run one learner on instance files")
    s.add_argument("method", choices=METHODS)
    s.add_argument("--mdp", required=True)
    s.add_argument("--demos", required=True)
    s.add_argument("--expert", help="expert policy file; adds the imitation gap")
    s.add_argument("--trace", help="write the loss trace CSV here")
    s.add_argument("--tol", type=float, help="gradient tolerance")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="solver option")
    common(s, "solver seed")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="imitation-gap sweep to CSV")
    b.add_argument("--methods", help="comma-separated methods")
    b.add_argument("--horizons", help="comma-separated horizons")
    b.add_argument("--tol", type=float, help="gradient tolerance")
    b.add_argument("--set", action="append", metavar="KEY=VALUE", help="solver option")
    b.add_argument("--threads", type=int, help="worker processes (default: ILDM_THREADS or CPUs)")
    common(b, "base seed for per-cell seed derivation")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run theorem checks; exit 0 iff all pass")
    v.add_argument("suite", choices=SUITES + ("all",))
    v.add_argument("--mdp", help="check this instance instead of the default family")
    v.add_argument("--demos")
    v.add_argument("--expert")
    v.add_argument("--horizons", help="cor1 horizons")
    v.add_argument("--methods", help=argparse.SUPPRESS)
    v.add_argument("--tol", type=float, help="gradient tolerance for the solvers")
    v.add_argument("--set", action="append", metavar="KEY=VALUE", help="solver option")
    v.add_argument("--threads", type=int)
    common(v, "base seed for instance generation")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ArtifactError) as exc:
        print(f"ildm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
