import numpy as np
import pytest

from adasample.problems import DenseDataset, LeastSquaresProblem, LogisticProblem


def random_least_squares(rng, n, d, spread=1.0):
    A = rng.standard_normal((n, d)) * np.exp(spread * rng.standard_normal(n))[:, None]
    return LeastSquaresProblem(DenseDataset(A, rng.standard_normal(n)))


def random_logistic(rng, n, d, ridge=0.1):
    Z = rng.standard_normal((n, d))
    y = (rng.random(n) < 0.5).astype(float)
    return LogisticProblem(DenseDataset(Z, y), ridge)


def random_problem(rng, n, d):
    if rng.random() < 0.5:
        return random_least_squares(rng, n, d)
    return random_logistic(rng, n, d, ridge=float(rng.uniform(0.01, 1.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = []


def report(criterion, ok, detail):
    """Record one acceptance line; printed again at the end of the session."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
