import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from largesol import bernstein as bs  # noqa: E402
from largesol import nonlinearity as nlm  # noqa: E402
from largesol import solver as sv  # noqa: E402
from largesol.nonlocal_operator import BallDomain, assemble, build_grid  # noqa: E402


@pytest.fixture(scope="session")
def ball():
    return BallDomain(d=2, R=1.0)


@pytest.fixture(scope="session")
def op_cache(ball):
    cache = {}

    def get(alpha, N, gamma):
        key = (alpha, N, gamma)
        if key not in cache:
            cache[key] = assemble(bs.stable(alpha), ball, build_grid(ball, N, gamma))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def large_run(op_cache, ball):
    """Full pipeline for stable alpha = 1, p = 2.5 at N = 512, gamma = 3."""
    spec, nl = bs.stable(1.0), nlm.make_power(2.5)
    op = op_cache(1.0, 512, 3.0)
    U = sv.build_U(ball, spec, nl, op.grid)
    bundle = sv.build_supersolution(op, U, nl)
    martin = sv.martin_field(op, spec)
    trace = sv.solve_large(op, nl, bundle, martin)
    return {"spec": spec, "nl": nl, "op": op, "U": U, "bundle": bundle, "martin": martin, "trace": trace}


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
