import csv
import math
import statistics
from pathlib import Path

import numpy as np
import pytest

from adasample import cli
from adasample.experiment import (ConfigError, ExperimentError, build_config, build_problem,
                                  load_config, mix64, parse_config_text, read_trace,
                                  run_experiment, run_seed, tune_learning_rate)
from adasample.problems import DenseDataset, LeastSquaresProblem

SMALL = """
# tiny context-shift problem
problem.kind = context_shift
problem.n = 12
problem.d = 3
problem.seed = 1
run.T = 60
run.eta = 0.01
arm.plain.sampler = uniform
arm.ada.sampler = adaosmd
experiment.repeats = 3
experiment.seed = 5
experiment.record_every = 7
experiment.metrics = subopt, v_eff, dist_d
"""


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_values():
    flat = parse_config_text("a.x = 3  # c\na.y = 0.5\na.z = true\na.s = hi\na.l = 1, 2.5, u\n\n")
    assert flat == {"a.x": 3, "a.y": 0.5, "a.z": True, "a.s": "hi", "a.l": [1, 2.5, "u"]}


@pytest.mark.parametrize("text", ["novalue\n", "x = 1\n", "a.b = 1\na.b = 2\n", " = 3\n"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_build_config_arms_and_product():
    cfg = build_config(parse_config_text(SMALL))
    assert list(cfg.arms) == ["plain", "ada"]
    assert cfg.arms["ada"].sampler == "adaosmd" and cfg.arms["ada"].T == 60
    assert cfg.metrics == ("subopt", "v_eff", "dist_d") and cfg.repeats == 3
    grid = build_config(parse_config_text(
        "run.algorithm = lsvrg, sgd\nrun.sampler = uniform, importance\nrun.T = 5\n"))
    assert list(grid.arms) == ["lsvrg-uniform", "lsvrg-importance", "sgd-uniform", "sgd-importance"]


@pytest.mark.parametrize("text", [
    "experiment.repeats = 0\n",
    "experiment.record_every = 0\n",
    "run.T = 5\nrun.bogus = 1\n",
    "arm.a.sampler = nope\n",
    "experiment.metrics = subopt, nope\n",
    "other.key = 1\n",
    "arm.a = 1\n",
])
def test_build_config_errors(text):
    with pytest.raises(ConfigError):
        build_config(parse_config_text(text))


def test_build_problem_kinds(tmp_path):
    p = build_problem({"kind": "concept_shift", "n": 20, "d": 4})
    assert (p.n(), p.dim()) == (20, 4)
    f = tmp_path / "d.libsvm"
    f.write_text("1 1:1 2:0.5\n-1 3:2\n")
    lg = build_problem({"kind": "libsvm", "path": str(f), "loss": "logistic", "ridge": 0.1, "dim": 4})
    assert (lg.n(), lg.dim(), lg.ridge) == (2, 4, 0.1)
    with pytest.raises(ConfigError):
        build_problem({"kind": "libsvm", "path": str(tmp_path / "missing")})
    with pytest.raises(ConfigError):
        build_problem({"kind": "nope"})


def test_seed_mix():
    assert mix64(0) == 0xE220A8397B1DCDAF  # SplitMix64 first output for state 0
    seeds = {run_seed(0, a, r) for a in ("x", "y") for r in range(50)}
    assert len(seeds) == 100
    assert run_seed(7, "x", 3) == run_seed(7, "x", 3) != run_seed(8, "x", 3)


def test_run_experiment_outputs(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    summary = run_experiment(cfg, tmp_path / "out")
    traces = sorted((tmp_path / "out" / "traces").iterdir())
    assert [t.name for t in traces] == sorted(
        f"{a}__r{r:03d}.csv" for a in ("plain", "ada") for r in range(3))
    header = traces[0].read_text().splitlines()[0]
    assert header == "run,iter,subopt,v_eff,index,prob,refresh,nanos,dist_d"
    rows = read_trace(traces[0])
    assert len(rows) == math.ceil(60 / 7) + 1
    assert [int(r["iter"]) for r in rows] == sorted({*range(0, 60, 7), 60})
    assert set(summary) == {"plain", "ada"}


def test_summary_matches_traces(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    run_experiment(cfg, tmp_path / "out")
    with open(tmp_path / "out" / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    for arm in ("plain", "ada"):
        runs = [read_trace(tmp_path / "out" / "traces" / f"{arm}__r{r:03d}.csv") for r in range(3)]
        for k, row in enumerate(r for r in summary if r["arm"] == arm):
            vals = [float(tr[k]["subopt"]) for tr in runs]
            assert int(row["iter"]) == int(runs[0][k]["iter"])
            assert abs(float(row["mean_subopt"]) - statistics.fmean(vals)) <= 1e-12 * max(1, abs(statistics.fmean(vals)))
            assert abs(float(row["sd_subopt"]) - statistics.stdev(vals)) <= 1e-12 * max(1, statistics.stdev(vals))


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_determinism_and_threads(tmp_path):
    path = write(tmp_path, SMALL)
    assert cli.main(["run", str(path), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", str(path), "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_T0_header_only(tmp_path):
    path = write(tmp_path, "problem.n = 5\nproblem.d = 2\nrun.T = 0\nexperiment.repeats = 1\n")
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == 0
    (trace,) = (tmp_path / "o" / "traces").iterdir()
    assert trace.read_text() == "run,iter,subopt,v_eff,index,prob,refresh,nanos\n"


def test_env_output_dir(tmp_path, monkeypatch):
    path = write(tmp_path, "problem.n = 5\nproblem.d = 2\nrun.T = 3\n")
    monkeypatch.setenv("ADASAMPLE_OUT", str(tmp_path / "env"))
    assert cli.main(["run", str(path)]) == 0
    assert (tmp_path / "env" / "summary.csv").exists()


def test_diverged_run_names_run(tmp_path, capsys):
    path = write(tmp_path, "problem.n = 5\nproblem.d = 2\nrun.T = 400\nrun.eta = 100.0\n"
                           "arm.hot.sampler = uniform\nexperiment.repeats = 2\n")
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) != 0
    assert "hot/r0" in capsys.readouterr().err


def test_bad_paths_exit_nonzero(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) != 0
    path = write(tmp_path, "problem.kind = libsvm\nproblem.path = /nonexistent/file\nrun.T = 3\n")
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) != 0
    assert "nonexistent" in capsys.readouterr().err


def quadratic(a, c=1.0):
    # F(x) = 0.5 * (sqrt(a) x - sqrt(a) c)^2 = 0.5 a (x - c)^2
    s = math.sqrt(a)
    return LeastSquaresProblem(DenseDataset(np.array([[s]]), np.array([s * c])))


def _tune_cfg(T=10, repeats=2):
    return build_config(parse_config_text(
        f"problem.n = 1\nrun.T = {T}\narm.gd.sampler = uniform\nexperiment.repeats = {repeats}\n"))


def test_tune_single_and_zero_rate():
    p = quadratic(2.0)
    assert tune_learning_rate(_tune_cfg(), [0.3], problem=p)[0] == 0.3
    best, scores = tune_learning_rate(_tune_cfg(), [0.0, 0.05], problem=p)
    assert best == 0.05 and scores[0.0] == pytest.approx(p.full_value(np.zeros(1)))


def test_tune_ties_go_to_smaller_rate():
    p = quadratic(1.0)
    # |1 - eta| is 0.5 for both rates, so F(x^T) agrees bitwise
    best, scores = tune_learning_rate(_tune_cfg(), [1.5, 0.5], problem=p)
    assert scores[0.5] == scores[1.5] and best == 0.5


def test_tune_quadratic_matches_analytic_argmin():
    a = 1 / 0.37
    p = quadratic(a)
    grid = list(np.linspace(0.05, 1.0, 20))
    best, _ = tune_learning_rate(_tune_cfg(T=3), grid, problem=p)
    # F(x^T) = 0.5 a (1 - eta a)^(2T) (x0 - c)^2 is minimised at eta = 1/a
    assert abs(best - 1 / a) <= grid[1] - grid[0]


def test_tune_all_diverged():
    p = quadratic(1.0)
    with pytest.raises(ExperimentError):
        tune_learning_rate(_tune_cfg(T=200), [1e3, 1e4], problem=p)
    with pytest.raises(ConfigError):
        tune_learning_rate(_tune_cfg(), [], problem=p)


def test_cli_tune(tmp_path, capsys):
    path = write(tmp_path, "problem.n = 8\nproblem.d = 2\nrun.T = 50\narm.a.sampler = uniform\n"
                           "tune.grid = 0.001, 0.01\n")
    assert cli.main(["tune", str(path)]) == 0
    assert "a: best eta = 0.01" in capsys.readouterr().out
    assert cli.main(["tune", str(path), "--grid", "0.001:0.002:2"]) == 0


def test_cli_verify(capsys):
    assert cli.main(["verify", "unbiasedness", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "seed 3" in out and "PASS unbiasedness" in out
    assert cli.main(["verify", "projection"]) == 0
    assert cli.main(["verify", "nope"]) != 0


def test_cli_usage_error():
    with pytest.raises(SystemExit) as err:
        cli.main([])
    assert err.value.code != 0
