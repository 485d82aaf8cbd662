import json

import numpy as np
import pytest

from src.backend.basis import ModelParams, build_basis
from src.backend.bath import WideBand, coeffs_wideband


@pytest.fixture
def params():
    return ModelParams(epsilon=0.5, alpha=0.05, g=0.5, beta=1.0)


@pytest.fixture
def basis(params):
    return build_basis(params, 6)


@pytest.fixture
def wideband():
    return WideBand(gamma=1.0, beta=1.0)


@pytest.fixture
def coeffs(basis, wideband):
    return coeffs_wideband(wideband, basis.params.epsilon, basis.omegas)


@pytest.fixture
def finite_band_coeffs(basis):
    """Finite band, so the principal-value b-coefficients are non-zero."""
    return coeffs_wideband(WideBand(gamma=1.0, beta=1.0, band=4.0), basis.params.epsilon, basis.omegas)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_density(rng):
    """Random full-rank density matrix of dimension 2·n_max."""
    def make(n_max: int) -> np.ndarray:
        dim = 2 * n_max
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        rho = a @ a.conj().T
        return rho / np.trace(rho).real
    return make


@pytest.fixture
def write_config(tmp_path):
    def write(data: dict, name: str = "config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path
    return write


@pytest.fixture
def minimal_config():
    return {
        "generator": "lindblad",
        "model": {"epsilon": 0.5, "alpha": 0.05, "g": 0.5},
    }
