"""SGD, loopless SVRG and loopless Katyusha with pluggable sampling.

Each ``*_step`` draws ``batch`` indices i.i.d. from the given distribution,
forms the importance-weighted estimator, updates the state in place and
returns ``(state, feedbacks)``. ``run`` drives a full trajectory and emits
one :class:`IterationTrace` per recorded iteration.

Random numbers are consumed in a fixed order per step: the index draws
first, then the anchor coin flip.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .samplers import DEFAULT_ALPHA, SAMPLERS, SamplerFeedback, draw, make_sampler


class DivergenceError(RuntimeError):
    """Raised when a run blows up (objective explodes or iterate goes non-finite)."""


ALGORITHMS = ("sgd", "lsvrg", "lkatyusha")
DIVERGENCE_FACTOR = 1e12


@dataclass
class SgdState:
    x: np.ndarray
    eta: float


@dataclass
class LsvrgState:
    x: np.ndarray
    w: np.ndarray
    full_grad_w: np.ndarray
    eta: float
    rho: float
    refreshed: bool = False


@dataclass
class LkatyushaState:
    x: np.ndarray
    z: np.ndarray
    v: np.ndarray
    w: np.ndarray
    full_grad_w: np.ndarray
    theta1: float
    theta2: float
    kappa: float
    L: float
    eta: float
    rho: float
    refreshed: bool = False

    def mix(self):
        return (self.theta1 * self.z + self.theta2 * self.w
                + (1.0 - self.theta1 - self.theta2) * self.v)


def lsvrg_init(problem, x0, eta, rho):
    if not 0 < rho <= 1:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    x0 = np.array(x0, dtype=np.float64)
    return LsvrgState(x0, x0.copy(), problem.full_grad(x0), float(eta), float(rho))


def lkatyusha_params(problem, sampler="importance", L=None, theta1=None, theta2=0.5):
    """Default (L, kappa, theta1, theta2, eta) for L-Katyusha.

    L defaults to the mean smoothness for importance/oracle sampling, the
    maximum for uniform, and 0.4 L_max + 0.6 L_mean for adaptive sampling.
    """
    if L is None:
        if sampler == "uniform":
            L = problem.max_smoothness()
        elif sampler == "adaosmd":
            L = 0.4 * problem.max_smoothness() + 0.6 * problem.mean_smoothness()
        else:
            L = problem.mean_smoothness()
    if not L > 0:
        raise ValueError(f"L must be > 0, got {L}")
    kappa = problem.strong_convexity() / L
    if theta1 is None:
        if kappa <= 0:
            raise ValueError("theta1 default needs a strongly convex problem (mu > 0)")
        theta1 = min(math.sqrt(2.0 * kappa * problem.n() / 3.0), 0.5)
    eta = theta2 / ((1.0 + theta2) * theta1)
    return L, kappa, theta1, theta2, eta


def lkatyusha_init(problem, x0, rho, L, kappa, theta1, theta2=0.5, eta=None):
    if not 0 < rho <= 1:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    if theta1 < 0 or theta2 < 0 or theta1 + theta2 > 1:
        raise ValueError(f"need theta1, theta2 >= 0 with sum <= 1, got {theta1}, {theta2}")
    if not L > 0:
        raise ValueError(f"L must be > 0, got {L}")
    if eta is None:
        eta = theta2 / ((1.0 + theta2) * theta1)
    x0 = np.array(x0, dtype=np.float64)
    return LkatyushaState(x=x0.copy(), z=x0.copy(), v=x0.copy(), w=x0.copy(),
                          full_grad_w=problem.full_grad(x0), theta1=float(theta1),
                          theta2=float(theta2), kappa=float(kappa), L=float(L),
                          eta=float(eta), rho=float(rho))


def _draws(dist, rng, batch):
    return [draw(dist, rng) for _ in range(batch)]


def _vr_estimate(problem, x, w, full_grad_w, dist, rng, batch):
    """Control-variate estimator averaged over ``batch`` i.i.d. draws."""
    n = problem.n()
    corr = np.zeros_like(x)
    fbs = []
    for i, p in _draws(dist, rng, batch):
        diff = problem._grad_i(i, x) - problem._grad_i(i, w)
        corr += diff / (n * p)
        fbs.append(SamplerFeedback(i, p, float(diff @ diff)))
    if batch > 1:
        corr /= batch
    g = corr + full_grad_w
    if not np.isfinite(g).all():
        raise DivergenceError("stochastic gradient estimate is non-finite")
    return g, fbs


def lsvrg_step(state, problem, dist, rng, batch=1):
    """x <- x - eta g; anchor w <- old x with probability rho."""
    x_old = state.x
    g, fbs = _vr_estimate(problem, x_old, state.w, state.full_grad_w, dist, rng, batch)
    state.x = x_old - state.eta * g
    state.refreshed = rng.random() < state.rho
    if state.refreshed:
        state.w = x_old
        state.full_grad_w = problem._full_grad(x_old)
    return state, fbs


def lkatyusha_step(state, problem, dist, rng, batch=1):
    """One loopless Katyusha step; ``state.x`` is kept equal to the mix of
    (z, w, v) for the next iteration."""
    x = state.x
    g, fbs = _vr_estimate(problem, x, state.w, state.full_grad_w, dist, rng, batch)
    ek = state.eta * state.kappa
    z_old = state.z
    z_new = (ek * x + z_old - (state.eta / state.L) * g) / (1.0 + ek)
    v_old = state.v
    state.v = x + state.theta1 * (z_new - z_old)
    state.z = z_new
    state.refreshed = rng.random() < state.rho
    if state.refreshed:
        state.w = v_old
        state.full_grad_w = problem._full_grad(v_old)
    state.x = state.mix()
    return state, fbs


def sgd_step(state, problem, dist, rng, batch=1):
    """x <- x - eta * grad f_i(x) / (n p_i), averaged over the batch."""
    n = problem.n()
    g = np.zeros_like(state.x)
    fbs = []
    for i, p in _draws(dist, rng, batch):
        gi = problem._grad_i(i, state.x)
        g += gi / (n * p)
        fbs.append(SamplerFeedback(i, p, float(gi @ gi)))
    if batch > 1:
        g /= batch
    if not np.isfinite(g).all():
        raise DivergenceError("stochastic gradient estimate is non-finite")
    state.x = state.x - state.eta * g
    return state, fbs


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

METRICS = ("subopt", "v_eff", "v_samp", "dist_d", "psi")


@dataclass
class RunConfig:
    algorithm: str = "lsvrg"
    sampler: str = "uniform"
    T: int = 1000
    eta: float | None = None
    rho: float | None = None
    batch: int = 1
    seed: int = 0
    average_iterates: bool = False
    alpha: float = DEFAULT_ALPHA
    record_every: int = 1
    metrics: tuple = ("subopt", "v_eff")
    theta1: float | None = None
    theta2: float = 0.5
    L: float | None = None
    abar_squared: bool = False
    step_form: str = "gradient"
    timing: bool = False
    run_id: str = "run"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.step_form not in ("gradient", "literal"):
            raise ValueError(f"unknown step_form {self.step_form!r}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.rho is not None and not 0 < self.rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be >= 1, got {self.record_every}")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}; expected a subset of {METRICS}")


@dataclass
class IterationTrace:
    run: str
    iter: int
    subopt: float
    v_eff: float | None
    index: int | None
    prob: float | None
    refresh: bool
    nanos: int
    extra: dict = field(default_factory=dict)


@dataclass
class RunResult:
    trace: list
    x: np.ndarray
    x_avg: np.ndarray | None
    state: object
    sampler: object


def default_eta(problem, cfg):
    """Constant step when none is configured.

    L-SVRG uses 1/(6 L_mean + L_F) for non-uniform sampling and
    1/(6 L_max) for uniform; SGD uses 1/L_mean or 1/L_max likewise.
    """
    uniform = cfg.sampler == "uniform"
    if cfg.algorithm == "lsvrg":
        if uniform:
            return 1.0 / (6.0 * problem.max_smoothness())
        return 1.0 / (6.0 * problem.mean_smoothness() + problem.full_smoothness())
    if cfg.algorithm == "sgd":
        return 1.0 / (problem.max_smoothness() if uniform else problem.mean_smoothness())
    raise ValueError("L-Katyusha step size comes from lkatyusha_params")


def _record_points(T, k):
    if T == 0:
        return set()
    pts = set(range(0, T + 1, k))
    pts.add(T)
    return pts


def _current_dist(sampler, problem, x, w):
    if sampler.needs_oracle:
        return sampler.distribution(problem, x, w)
    return sampler.distribution()


def run(cfg, problem, sink=None, x0=None):
    """Run ``cfg.T`` steps and return a :class:`RunResult`.

    Rows are recorded at iteration 0, every ``record_every`` iterations
    and at T (no rows at all when T = 0). Row t describes x^t; its index,
    prob and refresh fields come from the step that produced x^t. With
    ``average_iterates`` the mean of x^1..x^T is returned as ``x_avg``.
    """
    n, d = problem.n(), problem.dim()
    x0 = np.zeros(d) if x0 is None else np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    rho = cfg.rho if cfg.rho is not None else 1.0 / n
    sampler = make_sampler(cfg.sampler, problem, x0, cfg.T * cfg.batch,
                           alpha=cfg.alpha, abar_squared=cfg.abar_squared,
                           step_form=cfg.step_form)

    if cfg.algorithm == "lsvrg":
        eta = cfg.eta if cfg.eta is not None else default_eta(problem, cfg)
        state = lsvrg_init(problem, x0, eta, rho)
        step = lsvrg_step
    elif cfg.algorithm == "lkatyusha":
        L, kappa, th1, th2, eta = lkatyusha_params(problem, cfg.sampler, cfg.L,
                                                    cfg.theta1, cfg.theta2)
        if cfg.eta is not None:
            eta = cfg.eta
        state = lkatyusha_init(problem, x0, rho, L, kappa, th1, th2, eta)
        step = lkatyusha_step
    else:
        eta = cfg.eta if cfg.eta is not None else default_eta(problem, cfg)
        state = SgdState(x0.copy(), float(eta))
        step = sgd_step
    anchored = cfg.algorithm != "sgd"

    want = set(cfg.metrics)
    f_star = problem.exact_minimizer()[1] if "subopt" in want else 0.0
    f0 = problem.full_value(x0)
    limit = DIVERGENCE_FACTOR * max(abs(f0), np.finfo(float).tiny)
    record = _record_points(cfg.T, cfg.record_every)
    trace = []
    x_sum = np.zeros(d) if cfg.average_iterates else None
    t0 = time.perf_counter_ns()
    last = (None, None, False)

    def emit(t):
        x = state.x
        w = state.w if anchored else None
        fx = problem.full_value(x)
        if not np.isfinite(fx) or fx > limit:
            raise DivergenceError(
                f"run {cfg.run_id}: F(x^{t}) = {fx:.3e} exceeds {DIVERGENCE_FACTOR:g} * F(x^0)")
        extra = {}
        v_eff = None
        if want & {"v_eff", "v_samp"}:
            dist = _current_dist(sampler, problem, x, w)
            rep = metrics.sampling_variance(problem, dist, x, w)
            if "v_eff" in want:
                v_eff = rep.v_effective
            if "v_samp" in want:
                extra["v_samp"] = rep.v_sampling
        if "dist_d" in want:
            extra["dist_d"] = metrics.dist_D(problem, w) if anchored else None
        if "psi" in want:
            extra["psi"] = (metrics.lyapunov(problem, state).Psi
                            if cfg.algorithm == "lkatyusha" else None)
        nanos = time.perf_counter_ns() - t0 if cfg.timing else 0
        # without "subopt" in the metric set F* is not computed and the raw loss is kept
        idx, prob, refresh = last
        row = IterationTrace(cfg.run_id, t, fx - f_star, v_eff, idx, prob, refresh, nanos, extra)
        trace.append(row)
        if sink is not None:
            sink(row)

    for t in range(cfg.T):
        if t in record:
            emit(t)
        w = state.w if anchored else None
        dist = _current_dist(sampler, problem, state.x, w)
        # overflow shows up as a non-finite iterate and is reported just below
        with np.errstate(over="ignore", invalid="ignore"):
            state, fbs = step(state, problem, dist, rng, cfg.batch)
        for fb in fbs:
            sampler.update(fb)
        last = (fbs[0].index, fbs[0].prob_used, bool(getattr(state, "refreshed", False)))
        if not np.isfinite(state.x).all():
            raise DivergenceError(f"run {cfg.run_id}: iterate became non-finite at step {t}")
        if x_sum is not None:
            x_sum += state.x
    if cfg.T in record:
        emit(cfg.T)

    x_avg = x_sum / cfg.T if (x_sum is not None and cfg.T > 0) else None
    return RunResult(trace, state.x, x_avg, state, sampler)
