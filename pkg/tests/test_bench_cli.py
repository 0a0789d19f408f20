import csv
import io
import json

import numpy as np
import pytest

import ildm.bench as bench
from ildm.bench import (
    CSV_COLUMNS, BenchConfig, BenchRow, cell_rng, rows_csv, run_bench, strip_wall_time, summarize,
    summary_csv,
)
from ildm.cli import main, parse_int_list, parse_name_list
from ildm.instances import example_d5, is_td_mdp
from ildm.serialization import load_demos, load_mdp, load_policy
from ildm.solvers import SolverConfig


# bench

def test_bench_config_validation():
    for bad in ({"methods": ()}, {"methods": ("gail",)}, {"instance": "cliff"}, {"seeds": ()},
                {"horizons": (0,)}):
        with pytest.raises(ValueError):
            BenchConfig(**bad)


def test_single_cell_gives_one_row():
    rows = run_bench(BenchConfig(methods=("bc",), horizons=(5,), seeds=(3,)), threads=1)
    assert len(rows) == 1
    text = rows_csv(rows)
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert text.count("\n") == 2
    assert rows[0].gap >= -1e-9  # the expert is optimal on Reset Cliff


def test_rows_in_canonical_order_and_parallel_matches_serial():
    cfg = BenchConfig(methods=("dual_qdm_exact", "bc"), horizons=(6, 3), seeds=(2, 0, 1),
                      solver=SolverConfig(alpha=0.1, max_iters=30))
    serial = run_bench(cfg, threads=1)
    keys = [(r.method, r.H, r.seed) for r in serial]
    assert keys == sorted(keys, key=lambda k: (("dual_qdm_exact", "bc").index(k[0]), k[1], k[2]))
    parallel = run_bench(cfg, threads=2)
    assert strip_wall_time(rows_csv(parallel)) == strip_wall_time(rows_csv(serial))


def test_cell_seeds_are_independent_of_order():
    a = cell_rng(0, 10, 3).random(3)
    assert np.array_equal(a, cell_rng(0, 10, 3).random(3))
    assert not np.array_equal(a, cell_rng(0, 10, 4).random(3))
    assert not np.array_equal(a, cell_rng(1, 10, 3).random(3))


def test_solver_errors_are_recorded(monkeypatch):
    def boom(*args, **kwargs):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(bench, "solve", boom)
    rows = run_bench(BenchConfig(methods=("bc",), horizons=(3,), seeds=(0, 1)), threads=1)
    assert [r.converged for r in rows] == ["error:FloatingPointError"] * 2
    assert all(np.isnan(r.gap) for r in rows)
    assert summarize(rows) == []


def test_summary_statistics():
    rows = [BenchRow("bc", 5, 4, 5, 2, i, g, True, 1.0) for i, g in enumerate([1.0, 2.0, 3.0])]
    (m, H, n, mean, se), = summarize(rows)
    assert (m, H, n, mean) == ("bc", 5, 3, 2.0)
    assert se == pytest.approx(1.0 / np.sqrt(3))
    assert summary_csv(rows).splitlines()[0] == "method,H,n,mean_gap,se_gap"


def test_strip_wall_time():
    text = "method,H,S,A,N,seed,gap,converged,wall_time_ms\nbc,3,4,5,2,0,0.5,true,1.234\n"
    assert strip_wall_time(text) == "method,H,S,A,N,seed,gap,converged\nbc,3,4,5,2,0,0.5,true"


def test_d5_instance_runs_once_per_seed():
    rows = run_bench(BenchConfig(methods=("bc",), instance="d5", horizons=(10,), seeds=(0, 1)),
                     threads=1)
    assert [(r.H, r.gap) for r in rows] == [(2, 0.375), (2, 0.375)]


# CLI helpers

def test_parse_lists():
    assert parse_int_list("10, 20,40") == (10, 20, 40)
    assert parse_int_list("0-3,7") == (0, 1, 2, 3, 7)
    assert parse_name_list(" bc, iq_tv ,") == ("bc", "iq_tv")
    with pytest.raises(ValueError):
        parse_int_list(" , ")


# CLI end to end

def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gen_reset_cliff(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "reset-cliff", "--S", 4, "--A", 5, "--H", 20, "--N", 2,
                       "--out", tmp_path, "--seed", 3)
    assert code == 0 and "td=" in out
    mdp = load_mdp(tmp_path / "mdp.json")
    assert mdp.horizon == 20 and mdp.metadata["seed"] == 3
    assert load_demos(tmp_path / "demos.json", mdp).num_trajectories == 2


def test_gen_d5_is_the_example(tmp_path, capsys):
    assert run(capsys, "gen", "d5", "--out", tmp_path)[0] == 0
    mdp, expert, demo = example_d5()
    loaded = load_mdp(tmp_path / "mdp.json")
    assert loaded.content_hash() == mdp.content_hash()
    assert np.array_equal(load_demos(tmp_path / "demos.json", loaded).trajectories,
                          demo.trajectories)


def test_gen_random_reject_until_td(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "random", "--layers", "3,2,3", "--A", 2, "--N", 1,
                       "--reject-until-td", "--out", tmp_path, "--seed", 5)
    assert code == 0 and "td=true" in out
    mdp = load_mdp(tmp_path / "mdp.json")
    assert is_td_mdp(mdp, load_policy(tmp_path / "expert.json", mdp)).is_td


def test_gen_spec_violation(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "reset-cliff", "--S", 9, "--N", 2, "--out", tmp_path)
    assert code == 2 and "S-2 <= N+1" in err


@pytest.fixture
def d5_files(tmp_path, capsys):
    main(["gen", "d5", "--out", str(tmp_path)])
    capsys.readouterr()
    return tmp_path


def test_solve_bc_and_dual(d5_files, capsys):
    mdp, demos, expert = (d5_files / f for f in ("mdp.json", "demos.json", "expert.json"))
    code, out, _ = run(capsys, "solve", "bc", "--mdp", mdp, "--demos", demos, "--expert", expert)
    assert code == 0 and "method=bc iters=0 " in out and "gap=0.375" in out
    out_file = d5_files / "res.json"
    code, out, _ = run(capsys, "solve", "dual_qdm_exact", "--mdp", mdp, "--demos", demos,
                       "--out", out_file, "--trace", d5_files / "trace.csv")
    assert code == 0 and "converged=true" in out
    doc = json.loads(out_file.read_text())
    assert doc["config"]["alpha"] == 0.1  # picked up from the instance metadata
    assert np.allclose(doc["reward"], [[[1, 0], [0, 0]]] * 2, atol=1e-6)
    assert (d5_files / "trace.csv").read_text().startswith("iter,objective,grad_norm")


def test_solve_missing_file(d5_files, capsys):
    code, _, err = run(capsys, "solve", "bc", "--mdp", d5_files / "nope.json",
                       "--demos", d5_files / "demos.json")
    assert code == 2 and "nope.json" in err


def test_solve_bad_option(d5_files, capsys):
    code, _, err = run(capsys, "solve", "bc", "--mdp", d5_files / "mdp.json",
                       "--demos", d5_files / "demos.json", "--set", "gamma=1")
    assert code == 2 and "gamma" in err


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("alpha = 1\n")
    assert run(capsys, "verify", "thm2", "--config", bad)[0] == 2
    bad.write_text("[mystery]\nx = 1\n")
    code, _, err = run(capsys, "verify", "thm2", "--config", bad)
    assert code == 2 and "unknown section" in err
    bad.write_text("[verify]\ninstances = many\n")
    assert run(capsys, "verify", "thm2", "--config", bad)[0] == 2
    assert run(capsys, "bench", "--config", tmp_path / "missing.ini")[0] == 2


def test_bench_csv_and_determinism(tmp_path, capsys):
    cfg = tmp_path / "b.ini"
    cfg.write_text("[instance]\nkind = reset_cliff\nS = 4\nA = 5\nN = 2\n"
                   "[bench]\nmethods = bc, value_dice\nhorizons = 5\nseeds = 0-2\n"
                   "[solver]\nalpha = 0.1\n[solver.value_dice]\nmax_iters = 200\n")
    outs = []
    for name in ("a.csv", "b.csv"):
        code, _, _ = run(capsys, "bench", "--config", cfg, "--out", tmp_path / name, "--threads", 1)
        assert code == 0
        outs.append((tmp_path / name).read_text())
    assert strip_wall_time(outs[0]) == strip_wall_time(outs[1])
    rows = list(csv.DictReader(io.StringIO(outs[0])))
    assert len(rows) == 6 and {r["method"] for r in rows} == {"bc", "value_dice"}
    assert (tmp_path / "a_summary.csv").read_text().startswith("method,H,n,mean_gap,se_gap")
    # flags win over the file
    code, out, _ = run(capsys, "bench", "--config", cfg, "--methods", "bc", "--horizons", "3",
                       "--threads", 1)
    assert code == 0 and len(out.splitlines()) == 4


def test_verify_thm2_on_d5_file(d5_files, tmp_path, capsys):
    report = tmp_path / "report.json"
    code, out, _ = run(capsys, "verify", "thm2", "--mdp", d5_files / "mdp.json",
                       "--demos", d5_files / "demos.json", "--out", report)
    assert code == 0 and "PASS thm2 d5" in out
    doc = json.loads(report.read_text())
    assert doc["passed"] and doc["suites"][0]["checks"][0]["metrics"]["best_response_tv"] <= 1e-9


def test_verify_prop1_non_td_file(tmp_path, capsys):
    main(["gen", "random", "--S", "3", "--A", "3", "--H", "3", "--N", "2", "--expert", "random",
          "--out", str(tmp_path), "--seed", "1"])
    capsys.readouterr()
    code, out, _ = run(capsys, "verify", "prop1", "--mdp", tmp_path / "mdp.json",
                       "--demos", tmp_path / "demos.json", "--expert", tmp_path / "expert.json")
    assert code == 1 and "precondition failed" in out


def test_verify_prop1_needs_expert(d5_files, capsys):
    code, _, err = run(capsys, "verify", "prop1", "--mdp", d5_files / "mdp.json",
                       "--demos", d5_files / "demos.json")
    assert code == 2 and "--expert" in err


def test_verify_quick_suites(tmp_path, capsys):
    cfg = tmp_path / "v.ini"
    cfg.write_text("[verify]\ninstances = 2\npoints = 2\n")
    for suite in ("thm2", "lemma1", "prop1", "gradcheck", "roundtrip"):
        code, out, _ = run(capsys, "verify", suite, "--config", cfg)
        assert code == 0, out
        assert out.strip().endswith(f"verify {suite}: passed")
