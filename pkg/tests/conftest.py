import numpy as np
import pytest

from logibranch import ModelParams
from logibranch import conditioning, yaglom


@pytest.fixture(scope="session")
def desk_params():
    """Small-population workhorse parameter set used across the suite."""
    return ModelParams(1.0, 0.3, 1.0)


@pytest.fixture(scope="session")
def desk_q_table(desk_params):
    return conditioning.rate_table_Q(desk_params, K=60)


@pytest.fixture(scope="session")
def desk_yaglom(desk_params):
    return yaglom.yaglom_recursion(desk_params, K=300)


def total_variation(p, q):
    n = max(len(p), len(q))
    pp = np.zeros(n)
    qq = np.zeros(n)
    pp[: len(p)] = p
    qq[: len(q)] = q
    return 0.5 * float(np.abs(pp - qq).sum())
