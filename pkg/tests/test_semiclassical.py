import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.backend.basis import BlockDensity, ModelParams, build_basis
from src.backend.bath import WideBand, coeffs_wideband
from src.backend.errors import BasisError, BathError, GridError
from src.backend.generators import escape_rates
from src.backend.semiclassical import (
    Limiter,
    PhaseField,
    PhaseGrid,
    RateField,
    RateVariant,
    SolverConfig,
    Transport,
    _advect,
    blockade_slope,
    blockade_table,
    cme_rates,
    exchange,
    lcme_rate_fields,
    liouville_residual,
    phase_field_to_csv,
    phase_hamiltonians,
    rate_field_to_csv,
    solve_cme,
    solve_lcme,
    thermal_kernel_integral,
    wigner_closed_form,
    wigner_projector,
)


@pytest.fixture
def model():
    return ModelParams(epsilon=0.25, alpha=0.05, g=0.5, beta=1.0)


@pytest.fixture
def small_basis(model):
    return build_basis(model, 4)


@pytest.fixture
def grid(model):
    return PhaseGrid.for_model(model, 3, points=64)


class TestGrid:
    def test_cell_centres(self):
        grid = PhaseGrid(0.0, 1.6, -1.0, 1.0, 16, 20)
        assert grid.dx == pytest.approx(0.1)
        assert grid.x[0] == pytest.approx(0.05)
        assert grid.p[-1] == pytest.approx(0.95)
        assert grid.shape == (16, 20)
        assert grid.integrate(np.ones(grid.shape)) == pytest.approx(3.2)

    def test_validation(self):
        with pytest.raises(GridError):
            PhaseGrid(1.0, 0.0, -1.0, 1.0, 32, 32)
        with pytest.raises(GridError):
            PhaseGrid.symmetric(1.0, 8)

    def test_resolution_and_support(self, model):
        coarse = PhaseGrid.symmetric(6.0, 16)
        with pytest.raises(GridError):
            coarse.check_resolution(model.epsilon)
        narrow = PhaseGrid.symmetric(1.0, 64)
        with pytest.raises(GridError):
            narrow.check_support(model, 3, 0)

    def test_for_model_covers_both_surfaces(self, model, grid):
        for m in (0, 1):
            grid.check_support(model, 3, m)
        grid.check_resolution(model.epsilon)


class TestWigner:
    @pytest.mark.parametrize("k", [0, 1, 3])
    def test_normalization(self, small_basis, grid, k):
        assert grid.integrate(wigner_projector(small_basis, k, 0, grid)) == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("k,m", [(0, 0), (2, 0), (1, 1)])
    def test_closed_form(self, small_basis, grid, k, m):
        x, p = grid.mesh()
        params = small_basis.params
        shift = params.displacement if m == 1 else 0.0
        expected = wigner_closed_form(k, x, p, params.epsilon, shift)
        assert_allclose(wigner_projector(small_basis, k, m, grid), expected, atol=1e-6)

    def test_from_density_mixes_levels(self, small_basis, grid):
        rho = BlockDensity.diagonal([0.7, 0.0, 0.0, 0.0], [0.0, 0.3, 0.0, 0.0])
        field = PhaseField.from_density(small_basis, rho, grid)
        assert field.mass0 == pytest.approx(0.7, abs=1e-4)
        assert field.mass1 == pytest.approx(0.3, abs=1e-4)

    def test_unknown_eigenstate(self, small_basis, grid):
        with pytest.raises(BasisError):
            wigner_projector(small_basis, 4, 0, grid)


class TestRates:
    def test_heuristic_detailed_balance(self, model, grid, wideband):
        rates = cme_rates(wideband, model, grid)
        u = model.energy_gap(grid.x)
        assert_allclose(rates.gamma01[:, 0] / rates.gamma10[:, 0], np.exp(-model.beta * u), rtol=1e-10)
        assert_allclose(rates.gamma01 + rates.gamma10, model.scale * wideband.gamma)
        # constant in p
        assert np.all(rates.gamma01 == rates.gamma01[:, :1])

    def test_full_needs_infinite_wide_band(self, model, grid):
        with pytest.raises(BathError):
            cme_rates(WideBand(gamma=1.0, beta=1.0, band=5.0), model, grid, RateVariant.FULL)
        with pytest.raises(BathError):
            cme_rates(WideBand(gamma=1.0, beta=1.0), model, grid, RateVariant.LCME_EIGENSTATE)

    def test_thermal_kernel_is_odd(self):
        assert thermal_kernel_integral(0.0, 1.0) == 0.0
        value = thermal_kernel_integral(0.7, 1.0)
        assert math.isfinite(value)
        assert thermal_kernel_integral(-0.7, 1.0) == pytest.approx(-value)

    def test_lcme_hopping_from_ground_state(self, small_basis, grid, wideband):
        """∫ γ₀→₁·W_0 = (α²/ε)·κ⁰_0, since ∫2πε·W_k·W_0 = δ_k0."""
        coeffs = coeffs_wideband(wideband, small_basis.params.epsilon, small_basis.omegas)
        rates = lcme_rate_fields(small_basis, coeffs, grid)
        ground = wigner_projector(small_basis, 0, 0, grid)
        kappa0, _ = escape_rates(small_basis, coeffs)
        expected = small_basis.params.scale * kappa0[0]
        assert grid.integrate(rates.gamma01 * ground) == pytest.approx(expected, rel=1e-3)
        assert rates.variant is RateVariant.LCME_EIGENSTATE


class TestTransport:
    def test_exchange_conserves_and_equilibrates(self, rng):
        rho0, rho1 = rng.random((2, 8, 8))
        up, down = rng.random((2, 8, 8))
        a, b = exchange(rho0, rho1, up, down, 0.3)
        assert_allclose(a + b, rho0 + rho1)
        a, b = exchange(rho0, rho1, up, down, 1e6)
        assert_allclose(a, down / (up + down) * (rho0 + rho1))

    def test_exchange_without_rates(self):
        zero = np.zeros((4, 4))
        a, b = exchange(np.ones((4, 4)), zero, zero, zero, 1.0)
        assert_allclose(a, 1.0)
        assert_allclose(b, 0.0)

    @pytest.mark.parametrize("limiter", list(Limiter))
    def test_advection_is_conservative(self, rng, limiter):
        q = rng.random((20, 24))
        velocity = rng.normal(size=(19, 24))
        out = _advect(q, velocity, 0.01, 0.1, 0, limiter)
        assert out.sum() == pytest.approx(q.sum(), rel=1e-13)

    def test_transport_velocities(self):
        grid = PhaseGrid.symmetric(2.0, 32)
        x, p = grid.mesh()
        flow = Transport.from_hamiltonian(0.5 * (x ** 2 + p ** 2), grid)
        # ẋ = p on x-faces, ṗ = −x on p-faces
        assert_allclose(flow.x_faces, p[1:, :], atol=1e-12)
        assert_allclose(flow.p_faces, -x[:, 1:], atol=1e-12)

    def test_liouville_residual_converges(self):
        coarse = liouville_residual(PhaseGrid.symmetric(4.0, 48), 0.25)
        fine = liouville_residual(PhaseGrid.symmetric(4.0, 96), 0.25)
        assert fine < coarse


class TestSolvers:
    def test_cme_conserves_mass(self, model, wideband):
        grid = PhaseGrid.symmetric(4.0, 48)
        init = PhaseField.gaussian(grid, model.epsilon, x0=0.5)
        h0, h1 = phase_hamiltonians(model, grid)
        rates = cme_rates(wideband, model, grid)
        traj = solve_cme(rates, h0, h1, init, grid, SolverConfig(t_end=1.0, stride=5))
        assert traj.max_mass_drift < 1e-12
        assert traj.mass1[-1] > 0.0
        assert traj.times[-1] == pytest.approx(1.0)

    def test_cfl_violation(self, model, wideband):
        grid = PhaseGrid.symmetric(4.0, 48)
        init = PhaseField.gaussian(grid, model.epsilon)
        h0, h1 = phase_hamiltonians(model, grid)
        with pytest.raises(GridError):
            solve_cme(cme_rates(wideband, model, grid), h0, h1, init, grid, SolverConfig(t_end=1.0, dt=0.5))

    def test_hopping_only(self, model, wideband):
        """Without transport each cell relaxes independently to the local equilibrium."""
        grid = PhaseGrid.symmetric(3.0, 32)
        init = PhaseField.gaussian(grid, model.epsilon)
        h0, h1 = phase_hamiltonians(model, grid)
        rates = RateField(np.full(grid.shape, 0.2), np.full(grid.shape, 0.1), RateVariant.WIDEBAND_HEURISTIC)
        traj = solve_cme(rates, h0, h1, init, grid, SolverConfig(t_end=2.0, dt=0.1, transport=False))
        mass0 = init.mass0
        expected = mass0 * (1.0 / 3.0 + (2.0 / 3.0) * math.exp(-0.3 * 2.0))
        assert traj.mass0[-1] == pytest.approx(expected, rel=1e-12)

    def test_lcme_from_ground_state(self, small_basis, grid, wideband):
        coeffs = coeffs_wideband(wideband, small_basis.params.epsilon, small_basis.omegas)
        init = PhaseField.from_eigenstate(small_basis, 0, 0, grid)
        traj = solve_lcme(small_basis, coeffs, init, grid, SolverConfig(t_end=0.5, stride=10))
        assert traj.max_mass_drift < 1e-12
        assert traj.mass1[-1] > traj.mass1[0]

    def test_initial_field_must_be_normalized(self, model, wideband):
        grid = PhaseGrid.symmetric(4.0, 48)
        init = PhaseField.gaussian(grid, model.epsilon)
        init.rho0_w *= 2.0
        h0, h1 = phase_hamiltonians(model, grid)
        with pytest.raises(GridError):
            solve_cme(cme_rates(wideband, model, grid), h0, h1, init, grid, SolverConfig(t_end=1.0))


class TestBlockade:
    def test_slope_is_minus_one(self, wideband):
        params = ModelParams(epsilon=0.25, alpha=0.01, beta=1.0, g=0.0)
        g_values = [math.sqrt(s * 0.25) for s in (4.0, 8.0, 12.0, 16.0)]
        rows = blockade_table(g_values, params, wideband, n_max=10)
        assert [r.huang_rhys for r in rows] == pytest.approx([4.0, 8.0, 12.0, 16.0])
        assert blockade_slope(rows) == pytest.approx(-1.0, abs=1e-8)
        assert all(r.escape_0 >= r.rate_00 for r in rows)


class TestExport:
    def test_field_csv(self, tmp_path):
        grid = PhaseGrid.symmetric(2.0, 16)
        path = phase_field_to_csv(PhaseField.gaussian(grid, 0.25), tmp_path / "field.csv")
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# grid x_min=-2.0 x_max=2.0")
        assert lines[1] == "x,p,rho0,rho1"
        assert len(lines) == 2 + 16 * 16

    def test_rate_csv(self, tmp_path, model, wideband):
        grid = PhaseGrid.symmetric(2.0, 16)
        path = rate_field_to_csv(cme_rates(wideband, model, grid), grid, tmp_path / "rates.csv")
        lines = path.read_text().splitlines()
        assert lines[0].endswith("variant=wideband-heuristic")
        assert lines[1] == "x,p,gamma01,gamma10"
