"""Finite-sum objectives F(x) = (1/n) sum_i f_i(x).

Two concrete losses are provided, least squares and ridge-regularised
logistic regression. Both expose per-component values, gradients and
smoothness constants, plus an exact-minimizer oracle that the metrics
and the acceptance checks rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when the exact-minimizer oracle fails to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class DenseDataset:
    """Feature matrix (n x d) and label vector (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.features, dtype=np.float64)
        b = np.ascontiguousarray(self.labels, dtype=np.float64).reshape(-1)
        if a.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got shape {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise ValueError(
                f"{a.shape[0]} feature rows but {b.shape[0]} labels")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError("dataset contains non-finite entries")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "features", a)
        object.__setattr__(self, "labels", b)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


def _check_point(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise ValueError(f"expected a point of shape ({d},), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("point has non-finite entries")
    return x


class FiniteSumProblem:
    """Base class for F(x) = (1/n) sum_i f_i(x).

    Subclasses implement ``_value_i``, ``_grad_i``, ``_values``,
    ``_full_grad`` and ``_smoothness``; the public methods add argument
    checks. The optimizers call the underscored methods directly in their
    inner loops.
    """

    data: DenseDataset

    def __init__(self, data):
        self.data = data
        self._minimizer = None
        self._L = None

    # -- sizes -----------------------------------------------------------
    def n(self):
        return self.data.n

    def dim(self):
        return self.data.d

    # -- evaluation ------------------------------------------------------
    def _index(self, i):
        i = int(i)
        if not 0 <= i < self.data.n:
            raise IndexError(f"component index {i} out of range [0, {self.data.n})")
        return i

    def component_value(self, i, x):
        return self._value_i(self._index(i), _check_point(x, self.dim()))

    def component_grad(self, i, x):
        """Exact gradient of f_i at x."""
        return self._grad_i(self._index(i), _check_point(x, self.dim()))

    def component_grads(self, x):
        """All n component gradients at x as an (n, d) array."""
        return self._grads(_check_point(x, self.dim()))

    def full_value(self, x):
        return float(np.mean(self._values(_check_point(x, self.dim()))))

    def full_grad(self, x):
        return self._full_grad(_check_point(x, self.dim()))

    # -- constants -------------------------------------------------------
    def smoothness(self):
        """Vector of component smoothness constants L_i."""
        if self._L is None:
            L = self._smoothness()
            L.setflags(write=False)
            self._L = L
        return self._L

    def component_smoothness(self, i):
        return float(self.smoothness()[self._index(i)])

    def mean_smoothness(self):
        return float(np.mean(self.smoothness()))

    def max_smoothness(self):
        return float(np.max(self.smoothness()))

    def full_smoothness(self):
        # certified bound L_F <= mean L_i; the exact operator norm is not estimated
        return self.mean_smoothness()

    def strong_convexity(self):
        raise NotImplementedError

    def exact_minimizer(self):
        """Return ``(x_star, F_star)``; computed once and cached."""
        if self._minimizer is None:
            x = self._solve()
            x.setflags(write=False)
            self._minimizer = (x, self.full_value(x))
        return self._minimizer


class LeastSquaresProblem(FiniteSumProblem):
    """f_i(x) = 0.5 * (b_i - <a_i, x>)**2."""

    def _value_i(self, i, x):
        r = self.data.features[i] @ x - self.data.labels[i]
        return 0.5 * r * r

    def _values(self, x):
        r = self.data.features @ x - self.data.labels
        return 0.5 * r * r

    def _grad_i(self, i, x):
        a = self.data.features[i]
        return (a @ x - self.data.labels[i]) * a

    def _grads(self, x):
        r = self.data.features @ x - self.data.labels
        return r[:, None] * self.data.features

    def _full_grad(self, x):
        A = self.data.features
        return A.T @ (A @ x - self.data.labels) / self.data.n

    def _smoothness(self):
        return np.einsum("ij,ij->i", self.data.features, self.data.features)

    def hessian(self):
        A = self.data.features
        return A.T @ A / self.data.n

    def strong_convexity(self):
        lam = float(np.linalg.eigvalsh(self.hessian())[0])
        return max(lam, 0.0)

    def _solve(self):
        A, b = self.data.features, self.data.labels
        H = self.hessian()
        rhs = A.T @ b / self.data.n
        try:
            x = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            raise ConvergenceError("normal equations are singular; "
                                   "least-squares minimizer is not unique")
        # a few rounds of iterative refinement tighten the stationarity residual
        for _ in range(3):
            g = self._full_grad(x)
            if np.linalg.norm(g) <= 1e-13:
                break
            x = x - np.linalg.solve(H, g)
        res = float(np.linalg.norm(self._full_grad(x)))
        if not np.isfinite(res) or res > 1e-10:
            raise ConvergenceError(
                f"least-squares solve left gradient norm {res:.3e}", res)
        return x


def _log1pexp(t):
    # log(1 + exp(t)) without overflow
    return np.logaddexp(0.0, t)


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class LogisticProblem(FiniteSumProblem):
    """Cross-entropy loss with labels in {0, 1} plus (ridge/2)*||x||^2 on every term.

    Putting the ridge inside each f_i keeps the problem in finite-sum form,
    so component gradients stay unbiased for the full gradient.
    """

    def __init__(self, data, ridge=0.0):
        if ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {ridge}")
        labels = data.labels
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise ValueError("logistic labels must be in {0, 1}")
        super().__init__(data)
        self.ridge = float(ridge)

    def _value_i(self, i, x):
        t = float(self.data.features[i] @ x)
        y = self.data.labels[i]
        # -[y log p + (1-y) log(1-p)] = log(1+e^t) - y t
        return float(_log1pexp(t) - y * t + 0.5 * self.ridge * (x @ x))

    def _values(self, x):
        t = self.data.features @ x
        return _log1pexp(t) - self.data.labels * t + 0.5 * self.ridge * (x @ x)

    def _grad_i(self, i, x):
        z = self.data.features[i]
        t = z @ x
        p = 1.0 / (1.0 + np.exp(-t)) if t >= 0 else np.exp(t) / (1.0 + np.exp(t))
        return (p - self.data.labels[i]) * z + self.ridge * x

    def _grads(self, x):
        p = _sigmoid(self.data.features @ x)
        return (p - self.data.labels)[:, None] * self.data.features + self.ridge * x

    def _full_grad(self, x):
        Z = self.data.features
        p = _sigmoid(Z @ x)
        return Z.T @ (p - self.data.labels) / self.data.n + self.ridge * x

    def _smoothness(self):
        Z = self.data.features
        return np.einsum("ij,ij->i", Z, Z) / 4.0 + self.ridge

    def strong_convexity(self):
        return self.ridge

    def _hessian(self, x):
        Z = self.data.features
        p = _sigmoid(Z @ x)
        w = p * (1.0 - p)
        return (Z.T * w) @ Z / self.data.n + self.ridge * np.eye(self.data.d)

    def _solve(self, tol=1e-10, max_iter=200):
        # damped Newton with Armijo backtracking
        x = np.zeros(self.data.d)
        f = self.full_value(x)
        res = np.inf
        for _ in range(max_iter):
            g = self._full_grad(x)
            res = float(np.linalg.norm(g))
            if res <= tol:
                return x
            H = self._hessian(x)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, g, rcond=None)[0]
            slope = float(g @ step)
            if not slope > 0:
                step, slope = g, float(g @ g)
            if slope < 1e-12 * max(1.0, abs(f)):
                # inside the quadratic-convergence region the objective change
                # is below rounding, so line search cannot discriminate
                x = x - step
                f = self.full_value(x)
                continue
            s = 1.0
            while s > 1e-20:
                x_new = x - s * step
                f_new = self.full_value(x_new)
                if f_new <= f - 1e-4 * s * slope:
                    break
                s *= 0.5
            else:
                break
            x, f = x_new, f_new
        res = float(np.linalg.norm(self._full_grad(x)))
        if res <= tol:
            return x
        raise ConvergenceError(
            f"logistic minimizer did not converge: gradient norm {res:.3e}", res)
