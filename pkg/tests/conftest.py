import numpy as np
import pytest

from localgp import bench
from localgp.design import DesignSet


def fd1(f, t, h):
    """Five-point central first difference."""
    return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)


def fd2(f, t, h):
    """Five-point central second difference."""
    return (-f(t + 2 * h) + 16 * f(t + h) - 30 * f(t) + 16 * f(t - h) - f(t - 2 * h)) / (12 * h * h)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(b), floor)


def random_design(rng, j, p, scale=1.0):
    X = rng.uniform(0.0, scale, (j, p))
    Y = np.sin(3 * X).sum(axis=1) + 0.3 * rng.standard_normal(j)
    return X, Y


@pytest.fixture(scope="session")
def grid_design():
    """Two-dimensional test surface on a 201 x 201 grid."""
    X = bench.gramacy_grid(201)
    return DesignSet(X, bench.eval_gramacy2d(X))


@pytest.fixture(scope="session")
def small_grid_design():
    X = bench.gramacy_grid(41)
    return DesignSet(X, bench.eval_gramacy2d(X))


_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line: report(number, ok, detail)."""
    def rec(num, ok, detail):
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append((num, line))
        print(line)
        return ok
    return rec


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
