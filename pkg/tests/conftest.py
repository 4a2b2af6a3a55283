import numpy as np
import pytest

from noisereg.data import Dataset


def central_diff(f, beta, h=1e-5):
    beta = np.asarray(beta, dtype=float)
    out = np.zeros_like(beta)
    for k in range(beta.size):
        e = np.zeros_like(beta)
        e[k] = h
        out[k] = (f(beta + e) - f(beta - e)) / (2 * h)
    return out


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def random_dataset(rng, n, d, family="logistic", density=1.0, scale=1.0):
    X = rng.standard_normal((n, d)) * (rng.random((n, d)) < density)
    if family == "logistic":
        y = (rng.random(n) < 0.5).astype(float)
    elif family == "poisson":
        y = rng.poisson(1.0, n).astype(float)
    else:
        y = rng.standard_normal(n)
    return Dataset.from_dense(X * scale, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
