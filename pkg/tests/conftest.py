import numpy as np
import pytest
from scipy.stats import unitary_group

from qutritgate.profiles import paper_device


def random_hermitian(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (a + a.conj().T)


def random_unitary(dim: int, seed: int) -> np.ndarray:
    return unitary_group.rvs(dim, random_state=seed % (2**32))


def random_density(dim: int, seed: int, rank: int = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rank = dim if rank is None else rank
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


@pytest.fixture(scope="session")
def device():
    return paper_device(decoherence=False)


@pytest.fixture(scope="session")
def noisy_device():
    return paper_device(decoherence=True)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
