import numpy as np
import pytest

from svcip.assembly import Discretization, build_discretization
from svcip.mesh import build_unit_square_mesh
from svcip.timeloop import stokes_projection


@pytest.fixture(scope="session")
def disc3():
    """Alfeld-refined 3x3 mesh with face couplings."""
    return build_discretization(3, 2, "sv-cip")


@pytest.fixture(scope="session")
def disc_two_cells():
    """The unrefined two-triangle mesh: one interior face."""
    return Discretization(build_unit_square_mesh(1), 2)


@pytest.fixture(scope="session")
def transport3(disc3):
    """An exactly divergence-free discrete velocity vanishing on the boundary."""
    return stokes_projection(disc3).u


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def poly_field(coeffs):
    """Vector polynomial of degree <= 2 with a (2, 6) coefficient array on 1, x, y, x^2, xy, y^2."""
    coeffs = np.asarray(coeffs, dtype=float)

    def field(x, y, t=0.0):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        basis = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y])
        return np.einsum("km,m...->k...", coeffs, basis)

    return field


_VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and print it uncaptured."""

    def record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
