"""Sampling distributions over the n components of a finite sum.

Fixed strategies (uniform, smoothness-proportional), the per-iterate
variance-optimal distribution, and AdaOSMD: online stochastic mirror
descent on the floored simplex, run for a grid of expert learning rates
whose outputs are mixed by exponential weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

#: Exponent arguments above this are clamped before ``exp`` to avoid overflow.
EXP_CLAMP = 700.0

DEFAULT_ALPHA = 0.4


@dataclass(frozen=True, eq=False)
class SimplexDistribution:
    """Probability vector with an optional per-coordinate lower bound ``floor``."""

    probs: np.ndarray
    floor: float = 0.0
    _cdf: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        n = p.shape[0]
        if n < 1:
            raise ValueError("distribution needs at least one coordinate")
        if not 0.0 <= self.floor <= 1.0 / n + 1e-15:
            raise ValueError(f"floor {self.floor} outside [0, 1/n]")
        if not np.isfinite(p).all():
            raise ValueError("probabilities must be finite")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        if p.min() < self.floor - 1e-15:
            raise ValueError(f"entry {p.min()!r} below floor {self.floor!r}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n(self):
        return self.probs.shape[0]

    def cdf(self):
        if self._cdf is None:
            object.__setattr__(self, "_cdf", np.cumsum(self.probs))
        return self._cdf

    def __len__(self):
        return self.n

    @classmethod
    def _trusted(cls, probs, floor):
        # skips validation; for distributions built internally from feasible parts
        obj = object.__new__(cls)
        object.__setattr__(obj, "probs", probs)
        object.__setattr__(obj, "floor", floor)
        object.__setattr__(obj, "_cdf", None)
        return obj


@dataclass(frozen=True)
class SamplerFeedback:
    """What a sampler learns from one draw: index, its probability, and the
    squared gradient difference a = ||grad f_i(x) - grad f_i(w)||^2."""

    index: int
    prob_used: float
    a_value: float

    def __post_init__(self):
        if not self.a_value >= 0:
            raise ValueError(f"a_value must be >= 0, got {self.a_value}")


def uniform_dist(n):
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return SimplexDistribution(np.full(n, 1.0 / n))


def importance_dist(smoothness):
    """p_i = L_i / sum_j L_j.

    Components with L_i = 0 get probability zero and are never drawn.
    """
    L = np.asarray(smoothness, dtype=np.float64).reshape(-1)
    if L.size == 0 or np.any(L < 0) or not np.isfinite(L).all():
        raise ValueError("smoothness constants must be finite and >= 0")
    total = L.sum()
    if total <= 0:
        raise ValueError("all smoothness constants are zero; distribution undefined")
    return SimplexDistribution(L / total)


def oracle_probs(diff_norms):
    """Normalise gradient-difference norms; uniform if they all vanish."""
    r = np.asarray(diff_norms, dtype=np.float64)
    if np.all(r < 1e-15):
        return np.full(r.shape[0], 1.0 / r.shape[0])
    return r / r.sum()


def oracle_dist(problem, x, w=None):
    """Variance-optimal distribution at (x, w): p_i proportional to
    ||grad f_i(x) - grad f_i(w)||.

    With ``w=None`` the control variate is zero (plain SGD), so p_i is
    proportional to ||grad f_i(x)||.
    """
    diff = problem.component_grads(x)
    if w is not None:
        diff = diff - problem.component_grads(w)
    return SimplexDistribution(oracle_probs(np.linalg.norm(diff, axis=1)))


def draw(dist, rng):
    """Inverse-CDF draw of one index; returns ``(index, probs[index])``.

    Consumes exactly one ``rng.random()`` call. Zero-probability entries
    are never returned.
    """
    probs = dist.probs if isinstance(dist, SimplexDistribution) else dist
    cdf = dist.cdf() if isinstance(dist, SimplexDistribution) else np.cumsum(probs)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    if i >= probs.shape[0]:
        i = probs.shape[0] - 1
    return i, float(probs[i])


# ---------------------------------------------------------------------------
# KL projection onto {q in simplex : q_i >= alpha/n}
# ---------------------------------------------------------------------------

def project_capped_simplex(points, alpha):
    """Bregman (unnormalised-entropy) projection onto the floored simplex.

    Parameters
    ----------
    points : array, shape (n,) or (m, n)
        Positive, not necessarily normalised, vectors. A 2-d input is
        projected row by row.
    alpha : float
        Floor parameter in (0, 1]; every output coordinate is >= alpha/n.

    Sort ascending; the first rank i (1-based) whose value, shrunk by
    ``1 - (i-1) alpha/n``, exceeds ``alpha/n`` times the tail mass fixes the
    cut. Ranks below the cut are set to the floor, the rest rescaled so the
    total is one.
    """
    P = np.asarray(points, dtype=np.float64)
    squeeze = P.ndim == 1
    if squeeze:
        P = P[None, :]
    m, n = P.shape
    floor = alpha / n
    r = np.arange(m)[:, None]
    order = P.argsort(axis=1, kind="stable")
    S = P[r, order]
    k = np.arange(n)
    tail = S[:, ::-1].cumsum(axis=1)[:, ::-1]
    hit = S * (1.0 - k * floor) > floor * tail
    cut = hit.argmax(axis=1)
    cut[~hit[r[:, 0], cut]] = n
    tail_at = tail[r[:, 0], np.minimum(cut, n - 1)]
    scale = np.where(cut < n, (1.0 - cut * floor) / tail_at, 0.0)
    out_sorted = S * scale[:, None]
    out_sorted[k[None, :] < cut[:, None]] = floor
    out = np.empty_like(P)
    out[r, order] = out_sorted
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# AdaOSMD
# ---------------------------------------------------------------------------

def expert_rate_grid(n, T, alpha, abar1):
    """Geometric grid of expert learning rates and its length E.

    rates_e = 2**(e-1) * alpha**3 / (n**3 * abar1) * sqrt(log n / (2 T)),
    E = floor(0.5 * log2(1 + 4 log(n/alpha) (T-1) / log n)) + 1.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 for the expert grid, got {n}")
    if T < 2:
        raise ValueError(f"need horizon T >= 2, got {T}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if not abar1 > 0:
        raise ValueError(f"abar1 must be > 0, got {abar1}")
    logn = math.log(n)
    E = int(math.floor(0.5 * math.log2(1 + 4 * math.log(n / alpha) * (T - 1) / logn))) + 1
    base = alpha ** 3 / (n ** 3 * abar1) * math.sqrt(logn / (2 * T))
    rates = base * 2.0 ** np.arange(E)
    return rates, E


def initial_abar(problem, x0, squared=False):
    """max_i ||grad f_i(x0)|| (or its square), the AdaOSMD scale parameter."""
    norms = np.linalg.norm(problem.component_grads(x0), axis=1)
    a = float(norms.max())
    if squared:
        a = a * a
    if a <= 0:
        # every component is stationary at x0; any positive scale works
        a = 1.0
    return a


@dataclass(frozen=True)
class ExpertState:
    dist: SimplexDistribution
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"expert rate must be > 0, got {self.rate}")


def _expert_exponent(rate, a, n, mix_prob, p_e, step_form):
    if step_form == "gradient":
        # -rate * [grad of the loss estimate] at the sampled coordinate
        return rate * a / (n * n * mix_prob * p_e * p_e)
    if step_form == "literal":
        return rate * a / (p_e ** 3)
    raise ValueError(f"unknown step_form {step_form!r}")


def osmd_expert_step(expert, fb, mix_prob, alpha, step_form="gradient"):
    """One mirror-descent step of a single expert; returns a new ExpertState.

    The sampled coordinate is multiplied by exp(rate * a / (n^2 * mix_prob *
    p_e^2)) and the result projected back onto the floored simplex.
    """
    p = expert.dist.probs
    n = p.shape[0]
    if fb.a_value == 0:
        return expert
    i = fb.index
    arg = _expert_exponent(expert.rate, fb.a_value, n, mix_prob, p[i], step_form)
    if arg > EXP_CLAMP:
        logger.warning("expert exponent %.3g clamped to %g", arg, EXP_CLAMP)
        arg = EXP_CLAMP
    q = p.copy()
    q[i] = p[i] * math.exp(arg)
    out = project_capped_simplex(q, alpha)
    return ExpertState(SimplexDistribution(out, floor=alpha / n), expert.rate)


class AdaOSMD:
    """Mutable AdaOSMD sampler state.

    Expert distributions are stored as rows of an (E, n) array so that the
    per-step work is one vectorised projection. ``experts`` gives the
    per-expert view.
    """

    def __init__(self, n, T, alpha=DEFAULT_ALPHA, abar1=1.0, step_form="gradient"):
        rates, E = expert_rate_grid(n, T, alpha, abar1)
        self.n = int(n)
        self.horizon = int(T)
        self.alpha = float(alpha)
        self.abar1 = float(abar1)
        self.floor = self.alpha / self.n
        self.step_form = step_form
        self.rates = rates
        self.expert_probs = np.full((E, self.n), 1.0 / self.n)
        e = np.arange(1, E + 1, dtype=np.float64)
        self.meta_weights = (1.0 + 1.0 / E) / (e * (e + 1.0))
        self.meta_rate = self.alpha / self.n * math.sqrt(8.0 / (T * self.abar1))
        self.saturations = 0
        self._current = None

    @property
    def E(self):
        return self.rates.shape[0]

    @property
    def experts(self):
        return [ExpertState(SimplexDistribution(row, floor=self.floor), float(r))
                for row, r in zip(self.expert_probs, self.rates)]

    def current(self):
        """Mixture sum_e theta_e p_e as a SimplexDistribution."""
        if self._current is None:
            p = self.meta_weights @ self.expert_probs
            # mixture sum can drift from 1 by a few ulps
            p /= p.sum()
            p.setflags(write=False)
            self._current = SimplexDistribution._trusted(p, self.floor)
        return self._current

    def losses(self, fb):
        """Loss estimate of every expert for this feedback."""
        pe = self.expert_probs[:, fb.index]
        return fb.a_value / (self.n * self.n * fb.prob_used * pe)

    def update(self, fb):
        if fb.prob_used < self.floor - 1e-15:
            raise ValueError(
                f"feedback probability {fb.prob_used!r} is below the floor "
                f"{self.floor!r}; it cannot come from this sampler")
        if fb.a_value == 0:
            return self
        i = fb.index
        pe = self.expert_probs[:, i]
        loss = self.losses(fb)
        arg = _expert_exponent(self.rates, fb.a_value, self.n, fb.prob_used, pe,
                               self.step_form)
        if np.any(arg > EXP_CLAMP):
            self.saturations += 1
            logger.warning("AdaOSMD exponent clamped at step with index %d", i)
            arg = np.minimum(arg, EXP_CLAMP)
        Q = self.expert_probs.copy()
        Q[:, i] = pe * np.exp(arg)
        self.expert_probs = project_capped_simplex(Q, self.alpha)

        z = -self.meta_rate * loss
        z -= z.max()
        w = self.meta_weights * np.exp(z)
        self.meta_weights = w / w.sum()
        self._current = None
        return self


def adaosmd_init(n, T, alpha=DEFAULT_ALPHA, abar1=1.0, step_form="gradient"):
    return AdaOSMD(n, T, alpha=alpha, abar1=abar1, step_form=step_form)


def adaosmd_current(state):
    return state.current()


def adaosmd_update(state, fb):
    return state.update(fb)


# ---------------------------------------------------------------------------
# Strategy objects consumed by the optimizers
# ---------------------------------------------------------------------------

class FixedSampler:
    """Wraps an immutable distribution; ``update`` is a no-op."""

    name = "fixed"
    needs_oracle = False

    def __init__(self, dist, name=None):
        self.dist = dist
        if name is not None:
            self.name = name

    def distribution(self, problem=None, x=None, w=None):
        return self.dist

    def update(self, fb):
        pass


class OracleSampler:
    name = "oracle"
    needs_oracle = True

    def distribution(self, problem, x, w):
        return oracle_dist(problem, x, w)

    def update(self, fb):
        pass


class AdaptiveSampler:
    name = "adaosmd"
    needs_oracle = False

    def __init__(self, state):
        self.state = state

    def distribution(self, problem=None, x=None, w=None):
        return self.state.current()

    def update(self, fb):
        self.state.update(fb)


SAMPLERS = ("uniform", "importance", "oracle", "adaosmd")


def make_sampler(kind, problem, x0, horizon, alpha=DEFAULT_ALPHA,
                 abar_squared=False, step_form="gradient"):
    """Build a sampler strategy by name."""
    n = problem.n()
    if kind == "uniform":
        return FixedSampler(uniform_dist(n), "uniform")
    if kind == "importance":
        return FixedSampler(importance_dist(problem.smoothness()), "importance")
    if kind == "oracle":
        return OracleSampler()
    if kind == "adaosmd":
        if n < 2:
            return FixedSampler(uniform_dist(n), "adaosmd")
        abar = initial_abar(problem, x0, squared=abar_squared)
        state = AdaOSMD(n, max(2, horizon), alpha=alpha, abar1=abar, step_form=step_form)
        return AdaptiveSampler(state)
    raise ValueError(f"unknown sampler {kind!r}; expected one of {SAMPLERS}")
