import math

import numpy as np
import pytest

from fracorder.forward import ForwardConfig, TimeGrid
from fracorder.spectral import NEUMANN, ConstantCoefficientSpec, closed_form_eigs
from fracorder.verify import unit_interval_data


@pytest.fixture(scope="session")
def interval():
    """Dirichlet Laplacian on (0, 1), 60 modes, data x(1-x) observed at 0.5."""
    return unit_interval_data()


@pytest.fixture(scope="session")
def cosine_eigs():
    """Neumann Laplacian on (0, pi): lambda_k = (k-1)^2, phi_k(0) = 1."""
    return closed_form_eigs(ConstantCoefficientSpec((math.pi,), bc=NEUMANN), 200)


@pytest.fixture(scope="session")
def fit_cfg():
    return ForwardConfig(mode_count=60, mode_tail_tol=1e-6, time_grid=TimeGrid(1e-3, 100.0, 120))


def heat_trace(times, count=400):
    """u(0, t) for a point mass under the Neumann heat equation on (0, pi)."""
    k = np.arange(1, count)
    return np.array([1 / math.pi + (2 / math.pi) * math.fsum(np.exp(-(k**2) * t)) for t in np.atleast_1d(times)])
