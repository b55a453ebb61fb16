import numpy as np
import pytest

from gdecomp.core import CoefficientSpec, GCoefficients, GeneratorSpec, SpaceGrid, SpaceTimeField
from gdecomp.pde import auto_time_grid

SIGMA_LOW, SIGMA_HIGH = 0.5, 1.0


@pytest.fixture(scope="session")
def gc():
    return GCoefficients(SIGMA_LOW, SIGMA_HIGH)


@pytest.fixture(scope="session")
def coeffs():
    return CoefficientSpec()


@pytest.fixture(scope="session")
def zero_gen():
    return GeneratorSpec.zero()


@pytest.fixture(scope="session")
def ref_space():
    return SpaceGrid(-8.0, 8.0, 401)


@pytest.fixture(scope="session")
def ref_time(gc, coeffs, ref_space):
    return auto_time_grid(1.0, gc, coeffs, ref_space, multiple=8)


@pytest.fixture(scope="session")
def small_space():
    return SpaceGrid(-6.0, 6.0, 121)


@pytest.fixture(scope="session")
def small_time(gc, coeffs, small_space):
    return auto_time_grid(1.0, gc, coeffs, small_space, multiple=8)


def tabulate(fn, time, space):
    return SpaceTimeField.from_function(fn, time, space)


def inner(space, half_width=4.0):
    """Mask of nodes with |x| <= half_width."""
    return np.abs(space.x) <= half_width + 1e-12


_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """record(criterion, ok, detail): log one acceptance line, then assert."""

    def _record(name: str, ok: bool, detail: str) -> None:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append((name, bool(ok), detail))
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
