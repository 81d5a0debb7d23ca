"""Variance, distance and potential quantities used to monitor the solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VarianceReport:
    v_effective: float
    v_sampling: float
    grad_diff_norm_sq: float


@dataclass(frozen=True)
class LyapunovReport:
    Z: float
    V: float
    W: float

    @property
    def Psi(self):
        return self.Z + self.V + self.W


def _probs(dist):
    return np.asarray(getattr(dist, "probs", dist), dtype=np.float64)


def grad_differences(problem, x, w):
    """(n, d) array of grad f_i(x) - grad f_i(w); ``w=None`` means zero."""
    G = problem.component_grads(x)
    if w is None:
        return G
    return G - problem.component_grads(w)


def effective_variance_from_diffs(diffs, probs):
    n = diffs.shape[0]
    sq = np.einsum("ij,ij->i", diffs, diffs)
    support = sq > 0
    if np.any(probs[support] <= 0):
        raise ZeroDivisionError(
            "distribution puts zero mass on a component with a nonzero gradient difference")
    return float(np.sum(sq[support] / probs[support]) / (n * n))


def effective_variance(problem, dist, x, w):
    """(1/n^2) sum_i ||grad f_i(x) - grad f_i(w)||^2 / p_i."""
    return effective_variance_from_diffs(grad_differences(problem, x, w), _probs(dist))


def sampling_variance(problem, dist, x, w):
    diffs = grad_differences(problem, x, w)
    ve = effective_variance_from_diffs(diffs, _probs(dist))
    mean_diff = diffs.mean(axis=0)
    gd = float(mean_diff @ mean_diff)
    return VarianceReport(ve, ve - gd, gd)


def dist_D(problem, w):
    """(1/n) sum_i ||grad f_i(w) - grad f_i(x*)||^2 / L_i."""
    x_star, _ = problem.exact_minimizer()
    diffs = grad_differences(problem, w, x_star)
    sq = np.einsum("ij,ij->i", diffs, diffs)
    L = problem.smoothness()
    zero = L == 0
    if np.any(sq[zero] > 0):
        raise ZeroDivisionError("L_i = 0 but the gradient difference is nonzero")
    return float(np.sum(sq[~zero] / L[~zero]) / problem.n())


def opt_heterogeneity(problem):
    x_star, _ = problem.exact_minimizer()
    G = problem.component_grads(x_star)
    return float(np.einsum("ij,ij->", G, G) / problem.n())


def lyapunov(problem, state):
    """Potential components for an L-Katyusha state.

    Z = L (1 + eta kappa) / (2 eta) ||z - x*||^2,
    V = (F(v) - F*) / theta1,
    W = theta2 (1 + theta1) / (rho theta1) (F(w) - F*).
    """
    if not state.theta1 > 0 or not state.rho > 0:
        raise ValueError("lyapunov needs theta1 > 0 and rho > 0")
    x_star, f_star = problem.exact_minimizer()
    dz = state.z - x_star
    Z = state.L * (1.0 + state.eta * state.kappa) / (2.0 * state.eta) * float(dz @ dz)
    V = (problem.full_value(state.v) - f_star) / state.theta1
    W = (state.theta2 * (1.0 + state.theta1) / (state.rho * state.theta1)
         * (problem.full_value(state.w) - f_star))
    return LyapunovReport(Z, V, W)
