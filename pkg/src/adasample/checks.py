"""Randomised self-checks behind ``adasample verify``.

Each suite draws a small random problem from a printed seed and compares a
library quantity with an exact or brute-force reference.
"""

from __future__ import annotations

import numpy as np

from . import metrics
from .problems import DenseDataset, LeastSquaresProblem, LogisticProblem
from .samplers import SimplexDistribution, oracle_probs, project_capped_simplex


def _random_problem(rng):
    n = int(rng.integers(3, 9))
    d = int(rng.integers(2, 5))
    A = rng.standard_normal((n, d)) * np.exp(rng.standard_normal(n))[:, None]
    if rng.random() < 0.5:
        return LeastSquaresProblem(DenseDataset(A, rng.standard_normal(n)))
    y = (rng.random(n) < 0.5).astype(float)
    return LogisticProblem(DenseDataset(A, y), ridge=float(rng.uniform(0.01, 0.5)))


def _random_dist(rng, n, floor=0.0):
    p = rng.dirichlet(np.ones(n))
    p = floor + (1.0 - n * floor) * p
    return SimplexDistribution(p / p.sum())


def _estimates(problem, x, w):
    n = problem.n()
    diffs = metrics.grad_differences(problem, x, w)
    return diffs, problem.full_grad(w), n


def check_unbiasedness(rng, trials=20):
    """sum_i p_i g_i equals grad F(x) for the variance-reduced estimator."""
    worst = 0.0
    for _ in range(trials):
        prob = _random_problem(rng)
        d = prob.dim()
        x, w = rng.standard_normal(d), rng.standard_normal(d)
        diffs, gw, n = _estimates(prob, x, w)
        p = _random_dist(rng, n).probs
        mean = sum(p[i] * (diffs[i] / (n * p[i]) + gw) for i in range(n))
        target = prob.full_grad(x)
        worst = max(worst, float(np.max(np.abs(mean - target)) / (1.0 + np.max(np.abs(target)))))
    return worst < 1e-10, f"max relative deviation {worst:.2e}"


def check_variance(rng, trials=20):
    """Exact E||g - grad F(x)||^2 matches V_e - ||grad F(x) - grad F(w)||^2."""
    worst = 0.0
    for _ in range(trials):
        prob = _random_problem(rng)
        d = prob.dim()
        x, w = rng.standard_normal(d), rng.standard_normal(d)
        diffs, gw, n = _estimates(prob, x, w)
        dist = _random_dist(rng, n, floor=0.1 / n)
        p = dist.probs
        target = prob.full_grad(x)
        exact = sum(p[i] * np.sum((diffs[i] / (n * p[i]) + gw - target) ** 2) for i in range(n))
        rep = metrics.sampling_variance(prob, dist, x, w)
        worst = max(worst, abs(exact - rep.v_sampling) / (1.0 + abs(exact)))
    return worst < 1e-10, f"max relative deviation {worst:.2e}"


def _kl_projection_reference(p, floor):
    # minimiser of KL(q || p) over {q >= floor, sum q = 1} is q = max(floor, c p)
    lo, hi = 0.0, 1.0 / p.min()
    for _ in range(200):
        c = 0.5 * (lo + hi)
        if np.maximum(floor, c * p).sum() > 1.0:
            hi = c
        else:
            lo = c
    return np.maximum(floor, 0.5 * (lo + hi) * p)


def kl_grid_projection(point, alpha, step=1e-3):
    """Dense-grid arg-min of KL(q || point) over the floored simplex, n in {2, 3}."""
    point = np.asarray(point, dtype=np.float64)
    n = point.size
    floor = alpha / n
    ticks = np.arange(floor, 1.0 - (n - 1) * floor + step / 2, step)
    if n == 2:
        Q = np.stack([ticks, 1.0 - ticks], axis=1)
    elif n == 3:
        a, b = np.meshgrid(ticks, ticks, indexing="ij")
        Q = np.stack([a.ravel(), b.ravel(), 1.0 - a.ravel() - b.ravel()], axis=1)
    else:
        raise ValueError("grid oracle supports n = 2 or 3")
    Q = Q[Q[:, -1] >= floor - 1e-12]
    Q = np.maximum(Q, 1e-300)
    kl = np.sum(Q * np.log(Q / point), axis=1)
    return Q[np.argmin(kl)]


def check_projection(rng, trials=200, grid_trials=10):
    """Sort/threshold output against a bisection solution of the KKT system,
    and against a dense grid search for n = 3."""
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 12))
        alpha = float(rng.uniform(0.05, 1.0))
        p = np.exp(2.0 * rng.standard_normal(n))
        p /= p.sum()
        q = project_capped_simplex(p, alpha)
        ref = _kl_projection_reference(p, alpha / n)
        worst = max(worst, float(np.max(np.abs(q - ref))), abs(float(q.sum()) - 1.0))
        if q.min() < alpha / n - 1e-15:
            return False, f"floor violated for n={n}, alpha={alpha}"
    grid_worst = 0.0
    for _ in range(grid_trials):
        alpha = float(rng.choice([0.1, 0.4]))
        p = np.exp(2.0 * rng.standard_normal(3))
        grid_worst = max(grid_worst, float(np.max(np.abs(
            project_capped_simplex(p, alpha) - kl_grid_projection(p, alpha)))))
    ok = worst < 1e-9 and grid_worst <= 2e-3
    return ok, f"max deviation {worst:.2e} (bisection), {grid_worst:.2e} (grid, n=3)"


def check_oracle(rng, trials=20):
    """Oracle probabilities attain (1/n^2)(sum ||diff_i||)^2 and beat random ones."""
    for _ in range(trials):
        prob = _random_problem(rng)
        d = prob.dim()
        x, w = rng.standard_normal(d), rng.standard_normal(d)
        diffs, _, n = _estimates(prob, x, w)
        norms = np.linalg.norm(diffs, axis=1)
        v_opt = metrics.effective_variance_from_diffs(diffs, oracle_probs(norms))
        bound = norms.sum() ** 2 / n ** 2
        if abs(v_opt - bound) > 1e-10 * (1.0 + bound):
            return False, f"oracle variance {v_opt!r} differs from {bound!r}"
        for _ in range(20):
            other = metrics.effective_variance_from_diffs(diffs, _random_dist(rng, n).probs)
            if other < v_opt * (1.0 - 1e-12):
                return False, "a random distribution beat the oracle"
    return True, "oracle is optimal on all trials"


SUITES = {
    "unbiasedness": check_unbiasedness,
    "variance": check_variance,
    "projection": check_projection,
    "oracle": check_oracle,
}


def verify(suite, seed):
    """Run one suite (or ``"all"``). Returns a list of ``(name, ok, message)``."""
    names = list(SUITES) if suite == "all" else [suite]
    for name in names:
        if name not in SUITES:
            raise KeyError(name)
    results = []
    for k, name in enumerate(names):
        rng = np.random.default_rng([seed, k])
        ok, msg = SUITES[name](rng)
        results.append((name, bool(ok), msg))
    return results
