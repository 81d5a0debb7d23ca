"""Synthetic regression designs and a LibSVM-format reader/writer.

Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), with
Gaussians from ``Generator.standard_normal``. Draws are taken in a fixed
order so a given generator config always yields the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import DenseDataset


@dataclass(frozen=True)
class ContextShiftSpec:
    """Linear model b = <theta*, a> + noise with a_i ~ N(0, s_i * Sigma).

    ``nu`` is the log-scale spread of the per-row factors s_i (smoothness
    heterogeneity), ``sigma`` the label noise (optimisation heterogeneity).
    """

    n: int = 100
    d: int = 10
    sigma: float = 1.0
    nu: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"context-shift design needs d >= 2, got {self.d}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.sigma < 0 or self.nu < 0:
            raise ValueError("sigma and nu must be >= 0")


@dataclass(frozen=True)
class ConceptShiftSpec:
    """One-hot rows with per-coordinate minimisers theta*_j ~ exp(N(0, nu^2))."""

    n: int = 300
    d: int = 30
    nu: float = 1.0
    seed: int = 0
    noise: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if self.nu < 0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")


def context_shift_covariance(d):
    """Diagonal of Sigma: 25**(k/(d-1) - 1) for k = 0..d-1."""
    k = np.arange(d, dtype=np.float64)
    return 25.0 ** (k / (d - 1) - 1.0)


def gen_context_shift(spec):
    """Return ``(DenseDataset, theta_star)``."""
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.d
    theta = 10.0 + 3.0 * rng.standard_normal(d)
    s = np.exp(spec.nu * rng.standard_normal(n))
    A = rng.standard_normal((n, d)) * np.sqrt(context_shift_covariance(d))
    A *= np.sqrt(s)[:, None]
    noise = spec.sigma * rng.standard_normal(n)
    b = A @ theta + noise
    return DenseDataset(A, b), theta


def gen_concept_shift(spec):
    """Return ``(DenseDataset, theta_star)`` for the one-hot design."""
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n, spec.d
    theta = np.exp(spec.nu * rng.standard_normal(d))
    supp = rng.integers(0, d, size=n)
    vals = 1.0 + 0.1 * rng.standard_normal(n)
    noise = spec.noise * rng.standard_normal(n)
    A = np.zeros((n, d))
    A[np.arange(n), supp] = vals
    b = vals * theta[supp] + noise
    return DenseDataset(A, b), theta


# ---------------------------------------------------------------------------
# LibSVM text format
# ---------------------------------------------------------------------------

class LibSVMFormatError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _label(x):
    # {+1, -1} -> {1, 0}; other labels pass through
    return 0.0 if x == -1.0 else x


def parse_libsvm(stream, d=None):
    """Read ``<label> <idx>:<val> ...`` lines (1-based indices) into a dense dataset.

    Parameters
    ----------
    stream : iterable of str
        Open text file or list of lines. Blank lines are skipped; ``#``
        comments are rejected.
    d : int, optional
        Number of features. Inferred as the largest index seen if omitted;
        when given, any larger index is an error.
    """
    labels, rows = [], []
    max_idx = 0
    for lineno, line in enumerate(stream, start=1):
        toks = line.split()
        if not toks:
            continue
        try:
            y = float(toks[0])
        except ValueError:
            raise LibSVMFormatError(lineno, f"bad label {toks[0]!r}") from None
        feats = {}
        for tok in toks[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise LibSVMFormatError(lineno, f"malformed token {tok!r}")
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise LibSVMFormatError(lineno, f"malformed token {tok!r}") from None
            if j < 1:
                raise LibSVMFormatError(lineno, f"index {j} must be >= 1")
            if d is not None and j > d:
                raise LibSVMFormatError(lineno, f"index {j} exceeds dimension {d}")
            feats[j] = v
            max_idx = max(max_idx, j)
        labels.append(_label(y))
        rows.append(feats)
    if not rows:
        raise LibSVMFormatError(0, "no data lines")
    dim = d if d is not None else max(max_idx, 1)
    X = np.zeros((len(rows), dim))
    for r, feats in enumerate(rows):
        for j, v in feats.items():
            X[r, j - 1] = v
    return DenseDataset(X, np.array(labels))


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2 ** 53 else repr(v)


def serialize_libsvm(dataset, signed=False):
    """Inverse of :func:`parse_libsvm` on the dense representation.

    With ``signed`` the labels {0, 1} are written as {-1, 1}, the usual
    convention of binary LibSVM files.
    """
    lines = []
    for a, y in zip(dataset.features, dataset.labels):
        if signed and y == 0.0:
            y = -1.0
        parts = [_fmt(y)]
        for j in np.flatnonzero(a):
            parts.append(f"{j + 1}:{_fmt(a[j])}")
        lines.append(" ".join(parts) + "\n")
    return "".join(lines)
