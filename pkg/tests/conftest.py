import numpy as np
import pytest

from gridstack.config import example_game
from gridstack.model import ForecastChain, GameG1, GameG2, PricingParams, UserSpec, build_reduced_game


@pytest.fixture(scope="session")
def ex1():
    return example_game("example1")


@pytest.fixture(scope="session")
def ex2():
    return example_game("example2")


@pytest.fixture(scope="session")
def ex2_g2(ex2):
    return build_reduced_game(ex2)


@pytest.fixture(scope="session")
def ex3():
    return example_game("example3")


@pytest.fixture(scope="session")
def ex4():
    return example_game("example4")


def random_chain(rng, T, m, lo=3.0, hi=12.0):
    predicted = rng.uniform(lo, hi, size=T)
    support = np.sort(rng.choice(np.arange(-2, 3), size=m, replace=False))
    trans = rng.dirichlet(np.ones(m), size=(max(T - 1, 1), m))[: max(T - 1, 0)]
    init = rng.dirichlet(np.ones(m))
    return ForecastChain(predicted, support, trans if T > 1 else np.zeros((0, m, m)), init)


def random_g2(rng, n_max=4, T_max=4, d_max=3, m_max=3) -> GameG2:
    n = int(rng.integers(1, n_max + 1))
    T = int(rng.integers(1, T_max + 1))
    m = int(rng.integers(1, m_max + 1))
    chain = random_chain(rng, T, m)
    thetas = rng.uniform(0.2, 2.0, size=n)
    dmax = rng.integers(1, d_max + 1, size=n)
    pricing = PricingParams(rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0))
    return GameG2(chain, thetas, dmax, pricing)


def random_g1(rng, n=2, T=2, m=3, d_max=3, b_max=1, thetas=None, pinned=None) -> GameG1:
    chain = random_chain(rng, T, m)
    if pinned is not None:
        chain = chain.pinned(pinned)
    thetas = rng.uniform(0.3, 2.0, size=n) if thetas is None else thetas
    users = [UserSpec(d_max=d_max, c_max=d_max + b_max, b_max=b_max, theta=float(t)) for t in thetas]
    return GameG1(chain, users, PricingParams(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)))


def path_enumeration(chain, start):
    """Every error path from ``start`` with its probability, by explicit enumeration."""
    paths = [((start,), 1.0)]
    for t in range(chain.horizon - 1):
        paths = [
            (p + (k,), w * chain.transition[t][p[-1], k])
            for p, w in paths
            for k in range(chain.n_errors)
            if chain.transition[t][p[-1], k] > 0
        ]
    return paths


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    """Record and print one acceptance line."""
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
