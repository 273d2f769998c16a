import numpy as np
import pytest

from delta_agg import graph as gr
from delta_agg import problem as pb


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def make_problem(Q, r, a=0.0, b=0.5, c=0.5, const=0.0, pi=1.0):
    """Single-agent problem with hand-set parameters."""
    return pb.AggProblem(Q=[Q], r=[r], a=[a], b=[b], c=[c], const=[const], pi=[pi])


@pytest.fixture
def path3():
    return gr.metropolis_weights(gr.path_graph(3))


@pytest.fixture(scope="session")
def er20():
    return gr.metropolis_weights(gr.generate_erdos_renyi(20, 0.5, 7))


@pytest.fixture(scope="session")
def prob20():
    return pb.generate_problem(20, 42)


# one (criterion, passed, detail) entry per acceptance check, printed at the end of the session
ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'} {name}: {detail}")
