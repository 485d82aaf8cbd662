import logging
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import trapezoid

from src.backend.basis import (
    BlockDensity,
    ModelParams,
    annihilation_matrix,
    build_basis,
    commutator_check,
    d_operator,
    franck_condon,
    franck_condon_quadrature,
    hamiltonian_matrix,
    hermite_functions,
    projector,
    wavefunction,
)
from src.backend.errors import BasisError


class TestModelParams:
    def test_derived_quantities(self):
        p = ModelParams(epsilon=0.25, alpha=0.05, g=1.0, ebar0=0.2)
        assert p.scale == pytest.approx(0.01)
        assert p.relaxation_time == pytest.approx(100.0)
        assert p.huang_rhys == pytest.approx(4.0)
        assert p.energy_gap(0.0) == pytest.approx(1.2)
        assert p.energy_gap(1.0) == pytest.approx(math.sqrt(2) + 1.2)

    @pytest.mark.parametrize("kwargs", [
        {"epsilon": 0.0, "alpha": 0.1, "g": 0.0},
        {"epsilon": 0.5, "alpha": -0.1, "g": 0.0},
        {"epsilon": 0.5, "alpha": 0.1, "g": 0.0, "beta": 0.0},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(BasisError):
            ModelParams(**kwargs)

    def test_warns_outside_weak_coupling(self, caplog):
        with caplog.at_level(logging.WARNING):
            ModelParams(epsilon=0.1, alpha=0.5, g=0.0)
        assert "weak-coupling" in caplog.text

    def test_zero_coupling_has_infinite_relaxation_time(self):
        assert math.isinf(ModelParams(epsilon=0.5, alpha=0.0, g=0.0).relaxation_time)


class TestFranckCondon:
    def test_identity_without_coupling(self):
        basis = build_basis(ModelParams(epsilon=0.5, alpha=0.0, g=0.0), 8)
        assert_allclose(basis.fc, np.eye(8))

    def test_ground_overlap(self):
        p = ModelParams(epsilon=0.5, alpha=0.0, g=1.0)
        assert franck_condon(p, 0, 0) == pytest.approx(math.exp(-p.huang_rhys / 2))

    def test_sign_convention(self):
        p = ModelParams(epsilon=0.5, alpha=0.0, g=0.7)
        assert franck_condon(p, 0, 1) > 0
        assert franck_condon(p, 1, 0) < 0
        assert franck_condon(p, 0, 1) == pytest.approx(-franck_condon(p, 1, 0))

    @pytest.mark.parametrize("g,eps", [(0.3, 0.25), (1.0, 1.0), (2.0, 0.25)])
    def test_matches_quadrature(self, g, eps):
        p = ModelParams(epsilon=eps, alpha=0.0, g=g)
        for n in range(0, 12, 3):
            for m in range(0, 12, 2):
                assert franck_condon(p, n, m) == pytest.approx(franck_condon_quadrature(p, n, m), abs=1e-10)

    def test_table_matches_scalar(self, basis):
        p = basis.params
        assert basis.fc[2, 4] == pytest.approx(franck_condon(p, 2, 4))
        assert basis.fc[5, 1] == pytest.approx(franck_condon(p, 5, 1))

    def test_truncated_completeness(self):
        basis = build_basis(ModelParams(epsilon=0.5, alpha=0.0, g=0.5), 40)
        norms = np.sum(basis.fc ** 2, axis=1)
        assert np.all(norms <= 1.0 + 1e-12)
        assert abs(basis.completeness_defect()[0]) < 1e-12

    def test_negative_index_rejected(self, params):
        with pytest.raises(BasisError):
            franck_condon(params, -1, 0)


class TestBasis:
    def test_layout(self, basis):
        n = basis.n_max
        assert basis.dim == 2 * n
        assert_allclose(basis.omegas, np.arange(-(n - 1), n))
        assert_allclose(basis.energies0, basis.params.epsilon * (np.arange(n) + 0.5))

    def test_minimum_size(self, params):
        with pytest.raises(BasisError):
            build_basis(params, 1)

    def test_tables_are_read_only(self, basis):
        with pytest.raises(ValueError):
            basis.fc[0, 0] = 1.0

    def test_d_operators_sum_to_annihilation(self, basis):
        total = sum(d_operator(basis, int(w)) for w in basis.omegas)
        assert_allclose(total, annihilation_matrix(basis))

    def test_out_of_range_omega_is_zero(self, basis):
        assert not np.any(d_operator(basis, basis.n_max))

    def test_eigen_operator_identity(self):
        basis = build_basis(ModelParams(epsilon=0.5, alpha=0.0, g=1.0), 20)
        assert max(commutator_check(basis, int(w)) for w in basis.omegas) < 1e-12

    def test_identity_residual_with_energy_offset(self):
        offset = 0.3
        basis = build_basis(ModelParams(epsilon=0.5, alpha=0.0, g=1.0, ebar0=offset), 10)
        d = d_operator(basis, 2)
        assert commutator_check(basis, 2) == pytest.approx(offset * np.linalg.norm(d))

    def test_hamiltonian_is_diagonal(self, basis):
        h = hamiltonian_matrix(basis)
        assert_allclose(np.diag(h).real, basis.energies)
        assert np.count_nonzero(h - np.diag(np.diag(h))) == 0

    def test_projector(self, basis):
        p = projector(basis, 2, 1)
        assert p[basis.n_max + 2, basis.n_max + 2] == 1.0
        assert np.trace(p).real == pytest.approx(1.0)
        with pytest.raises(BasisError):
            projector(basis, basis.n_max, 0)


class TestWavefunctions:
    @pytest.mark.parametrize("k", [0, 1, 5])
    def test_normalized(self, k):
        x = np.linspace(-8, 8, 4001)
        phi = wavefunction(k, x, 0.5)
        assert trapezoid(phi ** 2, x) == pytest.approx(1.0, abs=1e-10)

    def test_unweighted_recurrence(self):
        x = np.linspace(-3, 3, 61)
        weighted = hermite_functions(6, x, 0.5)
        bare = hermite_functions(6, x, 0.5, weighted=False)
        assert_allclose(weighted, bare * np.exp(-x ** 2 / (2 * 0.5)), atol=1e-14)

    def test_shift_moves_centre(self):
        x = np.linspace(-6, 6, 2001)
        phi = wavefunction(0, x, 0.5, shift=1.0)
        assert x[np.argmax(phi)] == pytest.approx(-1.0, abs=1e-2)


class TestBlockDensity:
    def test_matrix_round_trip(self, random_density):
        full = random_density(4)
        rho = BlockDensity.from_matrix(full)
        assert_allclose(rho.to_matrix(), full)
        assert rho.trace() == pytest.approx(1.0)
        assert rho.is_hermitian()

    def test_eigenstate(self):
        rho = BlockDensity.eigenstate(5, 3, 1)
        lambdas, thetas = rho.populations()
        assert lambdas.sum() == 0.0
        assert thetas[3] == 1.0
        with pytest.raises(BasisError):
            BlockDensity.eigenstate(5, 5, 0)

    def test_thermal_weights(self, basis):
        rho = BlockDensity.thermal(basis)
        lambdas, thetas = rho.populations()
        assert rho.trace() == pytest.approx(1.0)
        beta, eps = basis.params.beta, basis.params.epsilon
        assert lambdas[1] / lambdas[0] == pytest.approx(math.exp(-beta * eps))

    def test_inconsistent_shapes(self):
        with pytest.raises(BasisError):
            BlockDensity(np.eye(2), np.eye(3))
        with pytest.raises(BasisError):
            BlockDensity.from_matrix(np.eye(3))
