import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.backend.basis import BlockDensity, ModelParams, build_basis
from src.backend.bath import coeffs_wideband
from src.backend.errors import GeneratorError
from src.backend.generators import (
    GeneratorKind,
    RateMatrix,
    build_lindblad,
    build_rate_matrix,
    build_redfield,
    build_von_neumann,
    corrected_hamiltonian,
    dissipative_part,
    escape_rates,
    export_superoperator,
    matricize,
    read_superoperator,
    secular_project,
    stationary_populations,
)


@pytest.fixture(params=["redfield", "lindblad"])
def generator(request, basis, finite_band_coeffs):
    builder = build_redfield if request.param == "redfield" else build_lindblad
    return builder(basis, finite_band_coeffs)


def _random_diagonal(rng, n_max):
    weights = rng.random(2 * n_max)
    return np.diag(weights / weights.sum()).astype(complex)


class TestStructuralProperties:
    def test_trace_preserving(self, generator, random_density):
        rho = random_density(generator.basis.n_max)
        assert abs(np.trace(generator.apply_matrix(rho))) < 1e-13

    def test_hermiticity_preserving(self, generator, random_density):
        out = generator.apply_matrix(random_density(generator.basis.n_max))
        assert_allclose(out, out.conj().T, atol=1e-14)

    def test_coherence_block_stays_zero(self, generator, rng):
        out = BlockDensity.from_matrix(generator.apply_matrix(_random_diagonal(rng, generator.basis.n_max)))
        assert np.max(np.abs(out.rho01)) < 1e-15

    def test_shape_checked(self, generator):
        with pytest.raises(GeneratorError):
            generator.apply_matrix(np.eye(3))

    def test_apply_block_density(self, generator):
        rho = BlockDensity.eigenstate(generator.basis.n_max, 1, 0)
        out = generator.apply(rho)
        assert_allclose(out.to_matrix(), generator.apply_matrix(rho.to_matrix()))


class TestLindblad:
    def test_diagonal_closure(self, basis, finite_band_coeffs, rng):
        gen = build_lindblad(basis, finite_band_coeffs)
        out = gen.apply_matrix(_random_diagonal(rng, basis.n_max))
        assert_allclose(out, np.diag(np.diag(out)), atol=1e-16)

    def test_secular_projection_matches(self, basis, finite_band_coeffs, random_density):
        lindblad = build_lindblad(basis, finite_band_coeffs)
        projected = secular_project(build_redfield(basis, finite_band_coeffs))
        assert projected.kind is GeneratorKind.LINDBLAD
        rho = random_density(basis.n_max)
        assert_allclose(projected.apply_matrix(rho), lindblad.apply_matrix(rho), atol=1e-13)

    def test_secular_projection_needs_redfield(self, basis, coeffs):
        with pytest.raises(GeneratorError):
            secular_project(build_lindblad(basis, coeffs))

    def test_rejects_negative_weights(self, basis, coeffs):
        with pytest.raises(GeneratorError):
            build_lindblad(basis, coeffs.scaled(a_factor=-1.0))

    def test_spectrum_in_left_half_plane(self, basis, finite_band_coeffs):
        spectrum = np.linalg.eigvals(matricize(build_lindblad(basis, finite_band_coeffs)))
        assert np.max(spectrum.real) <= 1e-10

    def test_corrected_hamiltonian(self, basis, coeffs, finite_band_coeffs):
        regularized = corrected_hamiltonian(basis, coeffs)
        assert not np.any(regularized.shift)
        shifted = corrected_hamiltonian(basis, finite_band_coeffs)
        assert shifted.prefactor == pytest.approx(basis.params.alpha ** 2)
        assert_allclose(build_lindblad(basis, finite_band_coeffs).hamiltonian, shifted.total(basis))


class TestSecularDiagonalEquality:
    def test_diagonals_agree(self, basis, finite_band_coeffs, rng):
        redfield = dissipative_part(build_redfield(basis, finite_band_coeffs))
        lindblad = dissipative_part(build_lindblad(basis, finite_band_coeffs))
        for _ in range(10):
            rho = _random_diagonal(rng, basis.n_max)
            assert_allclose(np.diag(redfield.apply_matrix(rho)), np.diag(lindblad.apply_matrix(rho)), atol=1e-13)

    def test_von_neumann_has_no_dissipative_part(self, basis, random_density):
        gen = dissipative_part(build_von_neumann(basis))
        assert not np.any(gen.apply_matrix(random_density(basis.n_max)))


class TestRates:
    def test_rate_matrix_layout(self, basis, coeffs):
        rates = build_rate_matrix(basis, coeffs)
        scale = basis.params.scale
        assert rates.k01[1, 3] == pytest.approx(scale * coeffs.a_f(2) * basis.fc[1, 3] ** 2)
        assert rates.k10[3, 1] == pytest.approx(scale * coeffs.a_g(2) * basis.fc[1, 3] ** 2)
        kappa0, kappa1 = escape_rates(basis, coeffs)
        assert_allclose(rates.escape0, scale * kappa0)
        assert_allclose(rates.escape1, scale * kappa1)

    def test_generator_conserves_probability(self, basis, coeffs):
        q = build_rate_matrix(basis, coeffs).generator_matrix()
        assert_allclose(q.sum(axis=0), 0.0, atol=1e-15)
        off = q - np.diag(np.diag(q))
        assert np.all(off >= 0)

    def test_population_derivative_matches(self, basis, finite_band_coeffs, rng):
        q = build_rate_matrix(basis, finite_band_coeffs).generator_matrix()
        for builder in (build_lindblad, build_redfield):
            gen = builder(basis, finite_band_coeffs)
            rho = _random_diagonal(rng, basis.n_max)
            assert_allclose(np.diag(gen.apply_matrix(rho)).real, q @ np.diag(rho).real, atol=1e-14)

    def test_stationary_populations(self, basis, coeffs):
        rates = build_rate_matrix(basis, coeffs)
        lam, th = stationary_populations(rates)
        vector = np.concatenate([lam, th])
        assert vector.sum() == pytest.approx(1.0)
        assert_allclose(rates.generator_matrix() @ vector, 0.0, atol=1e-14)

    def test_decoupled_ladders_have_no_unique_steady_state(self, wideband):
        basis = build_basis(ModelParams(epsilon=0.5, alpha=0.05, g=0.0), 4)
        rates = build_rate_matrix(basis, coeffs_wideband(wideband, 0.5, basis.omegas))
        with pytest.raises(GeneratorError):
            stationary_populations(rates)

    def test_negative_rates_rejected(self):
        with pytest.raises(GeneratorError):
            RateMatrix(k01=-np.eye(2), k10=np.eye(2))


class TestInputChecks:
    def test_coefficients_for_other_epsilon(self, basis, wideband):
        wrong = coeffs_wideband(wideband, 0.25, basis.omegas)
        with pytest.raises(GeneratorError):
            build_redfield(basis, wrong)

    def test_missing_omegas(self, basis, coeffs):
        with pytest.raises(GeneratorError):
            build_lindblad(basis, coeffs.restrict([-1, 0, 1]))

    def test_mismatched_params(self, basis, coeffs):
        with pytest.raises(GeneratorError):
            build_rate_matrix(basis, coeffs, ModelParams(epsilon=0.5, alpha=0.1, g=0.5))


class TestSuperoperator:
    def test_matricize_matches_apply(self, basis, coeffs, random_density):
        gen = build_redfield(basis, coeffs)
        rho = random_density(basis.n_max)
        assert_allclose(matricize(gen) @ rho.reshape(-1), gen.apply_matrix(rho).reshape(-1), atol=1e-14)

    def test_size_guard(self):
        basis = build_basis(ModelParams(epsilon=0.5, alpha=0.05, g=0.5), 17)
        with pytest.raises(GeneratorError):
            matricize(build_von_neumann(basis))

    def test_export(self, tmp_path, basis, coeffs):
        matrix = matricize(build_lindblad(basis, coeffs))
        path = export_superoperator(matrix, tmp_path / "gen.bin")
        assert path.read_bytes().startswith(b"AHSIM-SUPEROP v1 rows=144 cols=144")
        assert_allclose(read_superoperator(path), matrix)

    def test_read_rejects_other_files(self, tmp_path):
        path = tmp_path / "other.bin"
        path.write_bytes(b"something else\n")
        with pytest.raises(GeneratorError):
            read_superoperator(path)
