import pytest

from ftfl.instance import Instance, generate


@pytest.fixture
def tiny():
    return Instance(f=[0.0], c=[[5.0]], r=[1])


@pytest.fixture
def banded_fractional():
    """A banded instance whose LP optimum is fractional with at least one cluster."""
    from ftfl.alg import prepare

    for seed in range(200):
        inst = generate("banded", 6, 6, 2, seed)
        prep = prepare(inst)
        if prep.clustering.clusters:
            return inst
    pytest.skip("no fractional banded instance found")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
