import numpy as np
import pytest

from distlq import centralized
from distlq.model import AgentView, IterationSchedule, LQTerminalProblem, Topology
from distlq.numerics import TimeGrid, sqrtm_psd
from distlq.scenarios import load_scenario


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile once so timed tests measure solving, not JIT compilation
    p = LQTerminalProblem([[0.0]], [[1.0]], [[1.0]], [[1.0]], 1.0, [1.0], [0.0])
    centralized.solve(p, TimeGrid(1.0, 10))


@pytest.fixture(scope="session")
def four_agent():
    return load_scenario("four_agent")


@pytest.fixture(scope="session")
def ugv():
    return load_scenario("ugv")


def scalar_problem(A=0.0, B=1.0, Q=1.0, R=1.0, T=1.0, x0=1.0, xT=0.0):
    return LQTerminalProblem([[A]], [[B]], [[Q]], [[R]], T, [x0], [xT])


def identical_views(problem, N):
    M = sqrtm_psd(problem.S)
    return [AgentView(i, problem.A, problem.B, problem.Q, M, problem.x0, problem.xT) for i in range(N)]


def random_problem(rng, n, m=None, T=1.0):
    m = m or max(1, n - 1)
    A = rng.normal(size=(n, n)) * 0.8
    B = rng.normal(size=(n, m))
    G = rng.normal(size=(n, n))
    Q = G @ G.T / n
    H = rng.normal(size=(m, m))
    R = H @ H.T + m * np.eye(m)
    return LQTerminalProblem(A, B, Q, R, T, rng.normal(size=n), rng.normal(size=n))


@pytest.fixture
def fast_schedule():
    return IterationSchedule(max_k=200, fixed_rounds=True)


@pytest.fixture
def ring4():
    return Topology.ring(4, 2.5)
