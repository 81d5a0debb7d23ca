"""Config-driven experiment runner.

A config is a flat text file of ``key = value`` lines whose keys carry a
dotted section prefix, e.g.::

    problem.kind = context_shift
    problem.n = 100
    run.T = 20000
    run.eta = 0.005
    arm.uniform.sampler = uniform
    arm.adaptive.sampler = adaosmd
    experiment.repeats = 10

``#`` starts a comment. Values are parsed as int, float, bool
(true/false) or string; a comma turns a value into a list.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import ConceptShiftSpec, ContextShiftSpec, gen_concept_shift, gen_context_shift, parse_libsvm
from .optimizers import METRICS, DivergenceError, RunConfig, run
from .problems import LeastSquaresProblem, LogisticProblem

OUT_ENV = "ADASAMPLE_OUT"
TRACE_COLUMNS = ("run", "iter", "subopt", "v_eff", "index", "prob", "refresh", "nanos")
EXTRA_COLUMNS = ("v_samp", "dist_d", "psi")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def parse_config_text(text):
    """Parse config text into a flat ``{dotted.key: value}`` dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section prefix")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if "," in value:
            out[key] = [_scalar(v) for v in value.split(",") if v.strip()]
        else:
            out[key] = _scalar(value)
    return out


def _as_list(v):
    if v is None:
        return []
    return list(v) if isinstance(v, list) else [v]


_RUN_FIELDS = {f.name for f in fields(RunConfig)} - {"seed", "run_id", "metrics",
                                                     "record_every", "timing"}


@dataclass
class ExperimentConfig:
    problem: dict
    arms: dict  # name -> RunConfig (seed filled per repeat)
    repeats: int = 1
    seed: int = 0
    output: str | None = None
    record_every: int = 1
    metrics: tuple = ("subopt", "v_eff")
    timing: bool = False
    tune_grid: list = field(default_factory=list)
    tune_arms: list = field(default_factory=list)

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError(f"experiment.repeats must be >= 1, got {self.repeats}")
        if self.record_every < 1:
            raise ConfigError(f"experiment.record_every must be >= 1, got {self.record_every}")
        if not self.arms:
            raise ConfigError("run grid is empty")


def _run_config(params, where):
    unknown = set(params) - _RUN_FIELDS
    if unknown:
        raise ConfigError(f"{where}: unknown run keys {sorted(unknown)}")
    try:
        return RunConfig(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _tune_grid(spec):
    """``lo:hi:count`` for an evenly spaced grid, or an explicit list."""
    if isinstance(spec, str) and spec.count(":") == 2:
        lo, hi, k = spec.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(k))]
    return [float(v) for v in _as_list(spec)]


def build_config(flat):
    sections = {}
    for key, value in flat.items():
        head, _, rest = key.partition(".")
        sections.setdefault(head, {})[rest] = value
    unknown = set(sections) - {"problem", "run", "arm", "experiment", "tune"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")

    base = dict(sections.get("run", {}))
    arms = {}
    arm_keys = sections.get("arm", {})
    if arm_keys:
        grouped = {}
        for key, value in arm_keys.items():
            name, _, fld = key.partition(".")
            if not fld:
                raise ConfigError(f"arm key 'arm.{key}' must look like arm.<name>.<field>")
            grouped.setdefault(name, {})[fld] = value
        for name, over in grouped.items():
            arms[name] = _run_config({**base, **over}, f"arm {name}")
    else:
        algs = _as_list(base.pop("algorithm", "lsvrg"))
        samps = _as_list(base.pop("sampler", "uniform"))
        for a, s in itertools.product(algs, samps):
            arms[f"{a}-{s}"] = _run_config({**base, "algorithm": a, "sampler": s}, "run")

    exp = sections.get("experiment", {})
    known = {"repeats", "seed", "output", "record_every", "metrics", "timing"}
    if set(exp) - known:
        raise ConfigError(f"unknown experiment keys {sorted(set(exp) - known)}")
    metrics = tuple(_as_list(exp.get("metrics", ["subopt", "v_eff"])))
    bad = set(metrics) - set(METRICS)
    if bad:
        raise ConfigError(f"unknown metrics {sorted(bad)}")
    tune = sections.get("tune", {})
    return ExperimentConfig(
        problem=sections.get("problem", {}),
        arms=arms,
        repeats=int(exp.get("repeats", 1)),
        seed=int(exp.get("seed", 0)),
        output=exp.get("output"),
        record_every=int(exp.get("record_every", 1)),
        metrics=metrics,
        timing=bool(exp.get("timing", False)),
        tune_grid=_tune_grid(tune.get("grid")) if "grid" in tune else [],
        tune_arms=[str(a) for a in _as_list(tune.get("arms"))],
    )


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return build_config(parse_config_text(text))


# ---------------------------------------------------------------------------
# problem construction and seeding
# ---------------------------------------------------------------------------

def build_problem(spec):
    spec = dict(spec)
    kind = spec.pop("kind", "context_shift")
    loss = spec.pop("loss", "least_squares")
    ridge = float(spec.pop("ridge", 0.0))
    if kind == "context_shift":
        data, _ = gen_context_shift(ContextShiftSpec(**spec))
    elif kind == "concept_shift":
        data, _ = gen_concept_shift(ConceptShiftSpec(**spec))
    elif kind == "libsvm":
        path = spec.pop("path", None)
        if path is None:
            raise ConfigError("problem.kind = libsvm needs problem.path")
        try:
            with open(path) as fh:
                data = parse_libsvm(fh, d=spec.pop("dim", None))
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {path}: {exc}") from None
    else:
        raise ConfigError(f"unknown problem.kind {kind!r}")
    if loss == "least_squares":
        return LeastSquaresProblem(data)
    if loss == "logistic":
        return LogisticProblem(data, ridge)
    raise ConfigError(f"unknown problem.loss {loss!r}")


_MASK64 = (1 << 64) - 1


def mix64(z):
    """SplitMix64 finaliser on a 64-bit integer."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def run_seed(master, arm, repeat):
    """Seed of repeat ``repeat`` of arm ``arm``:
    mix64(mix64(mix64(master) ^ crc32(arm)) ^ repeat)."""
    h = mix64(int(master) & _MASK64)
    h = mix64(h ^ zlib.crc32(arm.encode()))
    return mix64(h ^ int(repeat))


# ---------------------------------------------------------------------------
# trace output
# ---------------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_columns(metrics):
    return TRACE_COLUMNS + tuple(c for c in EXTRA_COLUMNS if c in metrics)


def write_trace(path, rows, metrics):
    cols = trace_columns(metrics)
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for r in rows:
        vals = [r.run, r.iter, r.subopt, r.v_eff, r.index, r.prob, r.refresh, r.nanos]
        vals += [r.extra.get(c) for c in cols[len(TRACE_COLUMNS):]]
        buf.write(",".join(_cell(v) for v in vals) + "\n")
    Path(path).write_text(buf.getvalue())


def read_trace(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _job(args):
    problem, cfg = args
    try:
        res = run(cfg, problem)
    except DivergenceError as exc:
        return cfg.run_id, None, str(exc)
    return cfg.run_id, res.trace, None


class ExperimentError(RuntimeError):
    pass


def _jobs(config, problem, arms):
    for name in arms:
        base = config.arms[name]
        for r in range(config.repeats):
            cfg = replace(base, seed=run_seed(config.seed, name, r), run_id=f"{name}/r{r}",
                          record_every=config.record_every, metrics=config.metrics,
                          timing=config.timing)
            yield name, r, cfg


def _execute(problem, cfgs, threads):
    jobs = [(problem, c) for c in cfgs]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_job, jobs))
    return [_job(j) for j in jobs]


def _prepare(problem, config):
    # warm the minimizer cache before runs fan out
    if "subopt" in config.metrics or set(config.metrics) & {"dist_d", "psi"}:
        problem.exact_minimizer()
    problem.smoothness()


def run_experiment(config, out_dir, threads=1, problem=None):
    """Run every (arm, repeat), write one trace CSV each plus ``summary.csv``.

    Returns a dict ``arm -> (iters, mean, sd)``. A diverged run raises
    :class:`ExperimentError` naming the run.
    """
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    problem = build_problem(config.problem) if problem is None else problem
    _prepare(problem, config)
    plan = list(_jobs(config, problem, list(config.arms)))
    results = _execute(problem, [c for _, _, c in plan], threads)
    failed = [(rid, msg) for rid, tr, msg in results if tr is None]
    if failed:
        rid, msg = failed[0]
        raise ExperimentError(f"run {rid} diverged: {msg}")

    per_arm = {}
    for (name, r, cfg), (_, trace, _) in zip(plan, results):
        write_trace(out / "traces" / f"{name}__r{r:03d}.csv", trace, config.metrics)
        per_arm.setdefault(name, []).append(trace)

    summary = {}
    buf = io.StringIO()
    buf.write("arm,iter,mean_subopt,sd_subopt,repeats\n")
    for name, traces in per_arm.items():
        iters = [row.iter for row in traces[0]]
        M = np.array([[row.subopt for row in tr] for tr in traces]).reshape(len(traces), len(iters))
        mean = M.mean(axis=0)
        sd = M.std(axis=0, ddof=1) if len(traces) > 1 else np.zeros(len(iters))
        summary[name] = (iters, mean, sd)
        for t, m, s in zip(iters, mean, sd):
            buf.write(f"{name},{t},{_cell(m)},{_cell(s)},{len(traces)}\n")
    (out / "summary.csv").write_text(buf.getvalue())
    return summary


def final_table(summary):
    """Rows ``(arm, final_mean, final_sd)`` for arms with at least one row."""
    return [(name, float(m[-1]), float(s[-1])) for name, (it, m, s) in summary.items() if it]


def tune_learning_rate(config, grid, arm=None, threads=1, problem=None):
    """Pick the rate with the lowest mean final loss F(x^T) over repeats.

    Ties go to the smaller rate; diverged runs count as infinite loss.
    Returns ``(best_rate, {rate: mean_loss})``.
    """
    if not grid:
        raise ConfigError("tuning grid is empty")
    arm = arm if arm is not None else next(iter(config.arms))
    if arm not in config.arms:
        raise ConfigError(f"unknown arm {arm!r}")
    problem = build_problem(config.problem) if problem is None else problem
    problem.smoothness()
    scores = {}
    for eta in sorted(float(g) for g in grid):
        base = replace(config.arms[arm], eta=eta)
        # no "subopt" metric: the subopt column then holds the raw loss F(x^T)
        sub = replace(config, arms={arm: base}, metrics=(), record_every=max(1, base.T))
        cfgs = [c for _, _, c in _jobs(sub, problem, [arm])]
        f0 = problem.full_value(np.zeros(problem.dim()))
        losses = []
        for _, trace, _ in _execute(problem, cfgs, threads):
            if trace is None:
                losses.append(math.inf)
            else:
                losses.append(trace[-1].subopt if trace else f0)
        scores[eta] = float(np.mean(losses)) if np.all(np.isfinite(losses)) else math.inf
    best = None
    for eta, s in scores.items():
        if math.isfinite(s) and (best is None or s < scores[best]):
            best = eta
    if best is None:
        raise ExperimentError(f"every rate in the grid diverged for arm {arm}")
    return best, scores


def default_output(config, override=None):
    return override or config.output or os.environ.get(OUT_ENV) or "results"
