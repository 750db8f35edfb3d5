import pytest

from coulombgap.orthopoly import PerturbedWeight, QuasiPolyData
from coulombgap.potential import gap_constants, gap_potential, ginibre, ginibre_outpost, solve_gap


@pytest.fixture(scope="session")
def outpost_pot():
    return ginibre_outpost()


@pytest.fixture(scope="session")
def gap_pot():
    return gap_potential(1.25)


@pytest.fixture(scope="session")
def ginibre_pot():
    return ginibre()


@pytest.fixture(scope="session")
def outpost_geometry(outpost_pot):
    sol = solve_gap(outpost_pot, 1.0)
    return gap_constants(outpost_pot, sol.b0, sol.a1, sol.tau_star)


@pytest.fixture(scope="session")
def gap_solution(gap_pot):
    return solve_gap(gap_pot)


@pytest.fixture(scope="session")
def gap_geometry(gap_pot, gap_solution):
    return gap_constants(gap_pot, gap_solution.b0, gap_solution.a1, gap_solution.tau_star)


@pytest.fixture(scope="session")
def outpost_data(outpost_pot, outpost_geometry):
    return QuasiPolyData.from_radial(outpost_pot, outpost_geometry)


@pytest.fixture(scope="session")
def gap_data(gap_pot, gap_geometry):
    return QuasiPolyData.from_radial(gap_pot, gap_geometry)


@pytest.fixture(scope="session")
def outpost_weight(outpost_pot):
    return PerturbedWeight(outpost_pot)


@pytest.fixture(scope="session")
def gap_weight(gap_pot):
    return PerturbedWeight(gap_pot)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
