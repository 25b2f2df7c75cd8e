import numpy as np
import pytest

from cofbench.structure import CrystalStructure, Lattice


def random_structure(rng, n, cell=None, name="fixture", elements=("C", "H", "O", "N")):
    if cell is None:
        cell = np.diag(rng.uniform(8.0, 14.0, size=3))
    frac = np.round(rng.random((n, 3)), 9)
    syms = list(rng.choice(elements, size=n))
    return CrystalStructure.from_arrays(name, cell, syms, frac)


def skewed_cell(rng):
    a, b, c = rng.uniform(8.0, 12.0, size=3)
    al, be, ga = rng.uniform(70.0, 110.0, size=3)
    return Lattice.from_parameters(a, b, c, al, be, ga)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one line per criterion, printed after the run
_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    def record(name, ok, detail, seconds):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail} [{seconds:.2f}s]"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
