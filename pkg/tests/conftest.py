import numpy as np
import pytest

from mspca.core import CovarianceSet
from mspca.simulation import canonical_loadings, scenario2_covariances


@pytest.fixture(scope="session")
def design():
    P1, P2, D = canonical_loadings(10)
    return P1, P2, D, P1 @ D @ P1.T, P2 @ D @ P2.T


@pytest.fixture(scope="session")
def scenario1_exact(design):
    _, _, _, S1, S2 = design
    return CovarianceSet.from_covariances([S1, S2])


@pytest.fixture(scope="session")
def shifting_covs():
    return CovarianceSet.from_covariances(scenario2_covariances(10, 10))


def random_spd(rng, p, floor=0.1):
    A = rng.standard_normal((p, p))
    return A @ A.T + floor * np.eye(p)


@pytest.fixture(scope="session")
def scenario1_noisy():
    from mspca.simulation import scenario1_covariances
    S1h, S2h, _, _ = scenario1_covariances(10, 0.1, 0)
    return CovarianceSet.from_covariances([S1h, S2h])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
