"""
Redfield and Lindblad generators on the truncated ladder basis.

Every generator acts on the full 2·n_max density matrix, coherence block
included. The action is the complex-linear map

    ρ ↦ −(i/ε)[H, ρ] + (α²/ε)·𝒟(ρ)

with H diagonal in the eigenbasis, so it can be applied to arbitrary
(non-Hermitian) matrices such as the matrix units used by `matricize`.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space

from src.backend.basis import (
    BlockDensity,
    LadderBasis,
    ModelParams,
    annihilation_matrix,
    d_operator,
)
from src.backend.bath import CoeffSet
from src.backend.errors import GeneratorError

logger = logging.getLogger(__name__)

MATRICIZE_MAX_N = 16
SUPEROP_MAGIC = "AHSIM-SUPEROP"


class GeneratorKind(Enum):
    REDFIELD = "redfield"
    LINDBLAD = "lindblad"
    VON_NEUMANN = "von_neumann"


Dissipator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Generator:
    """
    Immutable linear map ρ ↦ dρ/dt.

    `hamiltonian` holds the diagonal of the coherent part (Ĥ_s plus any
    corrected-Hamiltonian shift); `dissipator` is multiplied by `scale`.
    """
    kind: GeneratorKind
    basis: LadderBasis
    coeffs: Optional[CoeffSet]
    scale: float
    hamiltonian: np.ndarray
    dissipator: Optional[Dissipator] = field(default=None, repr=False, compare=False)

    @property
    def params(self) -> ModelParams:
        return self.basis.params

    @property
    def dim(self) -> int:
        return self.basis.dim

    def apply_matrix(self, rho: np.ndarray) -> np.ndarray:
        """Action on a full 2·n_max complex matrix."""
        rho = np.asarray(rho, dtype=complex)
        if rho.shape != (self.dim, self.dim):
            raise GeneratorError(f"state has shape {rho.shape}, generator acts on {self.dim}x{self.dim}")
        h = self.hamiltonian
        out = (-1j / self.params.epsilon) * (h[:, None] - h[None, :]) * rho
        if self.dissipator is not None and self.scale != 0.0:
            out = out + self.scale * self.dissipator(rho)
        return out

    def apply(self, rho: BlockDensity) -> BlockDensity:
        """Action on a Hermitian block density."""
        return BlockDensity.from_matrix(self.apply_matrix(rho.to_matrix()))


@dataclass(frozen=True)
class CorrectedHamiltonian:
    """Diagonal energy shifts of the Lindblad coherent part, multiplied by `prefactor` = α²."""
    diag0: np.ndarray
    diag1: np.ndarray
    prefactor: float

    @property
    def shift(self) -> np.ndarray:
        return self.prefactor * np.concatenate([self.diag0, self.diag1])

    def total(self, basis: LadderBasis) -> np.ndarray:
        """Diagonal of Ĥ_s + α²ℋ̂."""
        return basis.energies + self.shift


@dataclass(frozen=True)
class RateMatrix:
    """First-order hopping rates; k01[i][f] is |φ_i⁰,0⟩ → |φ_f¹,1⟩, k10[i][f] is |φ_i¹,1⟩ → |φ_f⁰,0⟩."""
    k01: np.ndarray
    k10: np.ndarray

    def __post_init__(self) -> None:
        if self.k01.shape != self.k10.shape or self.k01.ndim != 2 or self.k01.shape[0] != self.k01.shape[1]:
            raise GeneratorError(f"rate blocks have shapes {self.k01.shape} and {self.k10.shape}")
        if np.any(self.k01 < 0) or np.any(self.k10 < 0):
            raise GeneratorError("negative hopping rate")

    @property
    def n_max(self) -> int:
        return self.k01.shape[0]

    @property
    def escape0(self) -> np.ndarray:
        """Total rate of probability leaving |φ_i⁰,0⟩."""
        return self.k01.sum(axis=1)

    @property
    def escape1(self) -> np.ndarray:
        return self.k10.sum(axis=1)

    def generator_matrix(self) -> np.ndarray:
        """Q with d/dt [λ; θ] = Q·[λ; θ]."""
        q = np.zeros((2 * self.n_max, 2 * self.n_max))
        n = self.n_max
        q[:n, :n] = -np.diag(self.escape0)
        q[:n, n:] = self.k10.T
        q[n:, :n] = self.k01.T
        q[n:, n:] = -np.diag(self.escape1)
        return q


def _check_inputs(basis: LadderBasis, coeffs: CoeffSet, params: Optional[ModelParams]) -> ModelParams:
    params = basis.params if params is None else params
    if params != basis.params:
        raise GeneratorError("model parameters differ from those the basis was built with")
    if not coeffs.covers(basis.omegas):
        missing = [int(w) for w in basis.omegas if not coeffs.covers([w])]
        raise GeneratorError(f"coefficients missing for {len(missing)} omega values, first {missing[:5]}")
    if not math.isclose(coeffs.eps, params.epsilon) or not math.isclose(coeffs.shift, params.ebar0, abs_tol=1e-15):
        raise GeneratorError(
            f"coefficients tabulated for eps={coeffs.eps}, shift={coeffs.shift}; "
            f"model has epsilon={params.epsilon}, ebar0={params.ebar0}"
        )
    return params


def _omega_grid(coeffs: CoeffSet, basis: LadderBasis, name: str) -> np.ndarray:
    """n×n array whose [k, m] entry is the named coefficient at ω = m − k."""
    n = basis.n_max
    table = coeffs.table(name, basis.omegas)
    k = np.arange(n)
    return table[k[None, :] - k[:, None] + n - 1]


def escape_rates(basis: LadderBasis, coeffs: CoeffSet) -> tuple[np.ndarray, np.ndarray]:
    """
    Unscaled escape weights κ⁰[k] = Σ_ω a_F(ω)·fc[k][k+ω]² and κ¹[m] = Σ_ω a_G(ω)·fc[m−ω][m]².

    Multiplying by α²/ε gives the rate of probability leaving each eigenstate.
    """
    fc2 = basis.fc ** 2
    kappa0 = np.sum(_omega_grid(coeffs, basis, "a_F") * fc2, axis=1)
    kappa1 = np.sum(_omega_grid(coeffs, basis, "a_G") * fc2, axis=0)
    return kappa0, kappa1


def corrected_hamiltonian(basis: LadderBasis, coeffs: CoeffSet) -> CorrectedHamiltonian:
    fc2 = basis.fc ** 2
    diag0 = np.sum(_omega_grid(coeffs, basis, "b_F") * fc2, axis=1)
    diag1 = -np.sum(_omega_grid(coeffs, basis, "b_G") * fc2, axis=0)
    return CorrectedHamiltonian(diag0=diag0, diag1=diag1, prefactor=basis.params.alpha ** 2)


def build_von_neumann(basis: LadderBasis, hamiltonian: Optional[np.ndarray] = None) -> Generator:
    """Closed evolution under a diagonal Hamiltonian (Ĥ_s by default; zeros gives the zero generator)."""
    h = basis.energies if hamiltonian is None else np.asarray(hamiltonian, dtype=float)
    return Generator(
        kind=GeneratorKind.VON_NEUMANN,
        basis=basis,
        coeffs=None,
        scale=0.0,
        hamiltonian=h,
    )


def build_redfield(basis: LadderBasis, coeffs: CoeffSet, params: Optional[ModelParams] = None) -> Generator:
    """
    Redfield generator with all ω ≠ ω′ cross terms.

    With A_F = Σ_ω F(ω)·D†(ω), A_G = Σ_ω G(ω)·D†(ω) and d̂ = Σ_ω D(ω):

        ℛ(ρ) = −[d̂A_Fρ − A_Fρd̂ + ρA_F†d̂† − d̂†ρA_F†]
               −[ρA_Gd̂ − d̂ρA_G + d̂†A_G†ρ − A_G†ρd̂†]
    """
    params = _check_inputs(basis, coeffs, params)
    n = basis.n_max
    d = annihilation_matrix(basis)
    fc_t = basis.fc.T

    f_grid = 0.5 * _omega_grid(coeffs, basis, "a_F") + 1j * _omega_grid(coeffs, basis, "b_F")
    g_grid = 0.5 * _omega_grid(coeffs, basis, "a_G") + 1j * _omega_grid(coeffs, basis, "b_G")

    # A[n+m, k] = coefficient(m − k)·fc[k][m]
    a_f = np.zeros((2 * n, 2 * n), dtype=complex)
    a_g = np.zeros((2 * n, 2 * n), dtype=complex)
    a_f[n:, :n] = f_grid.T * fc_t
    a_g[n:, :n] = g_grid.T * fc_t

    d_h = d.conj().T
    d_af = d @ a_f
    af_h_d_h = d_af.conj().T
    af_h = a_f.conj().T
    ag_d = a_g @ d
    d_h_ag_h = ag_d.conj().T
    ag_h = a_g.conj().T

    def dissipator(rho: np.ndarray) -> np.ndarray:
        term_f = d_af @ rho - a_f @ rho @ d + rho @ af_h_d_h - d_h @ rho @ af_h
        term_g = rho @ ag_d - d @ rho @ a_g + d_h_ag_h @ rho - ag_h @ rho @ d_h
        return -(term_f + term_g)

    logger.debug(f"Built Redfield generator n_max={n}, scale={params.scale:.3e}")
    return Generator(
        kind=GeneratorKind.REDFIELD,
        basis=basis,
        coeffs=coeffs,
        scale=params.scale,
        hamiltonian=basis.energies.copy(),
        dissipator=dissipator,
    )


def build_lindblad(basis: LadderBasis, coeffs: CoeffSet, params: Optional[ModelParams] = None) -> Generator:
    """
    GKLS generator with jump operators D†(ω) (weights a_F(ω)) and D(ω) (weights a_G(ω)).

    The coherent part is Ĥ_s + α²ℋ̂ with ℋ̂ from `corrected_hamiltonian`.
    """
    params = _check_inputs(basis, coeffs, params)
    for name in ("a_F", "a_G"):
        weights = getattr(coeffs, name)
        if np.any(weights < 0):
            raise GeneratorError(f"negative Lindblad weight in {name}: min {weights.min():.3e}")

    n = basis.n_max
    kappa = np.concatenate(escape_rates(basis, coeffs))
    damping = -0.5 * (kappa[:, None] + kappa[None, :])

    # per-ω diagonals c_ω[k] = fc[k][k+ω] and their slice bounds
    jumps = []
    for omega in basis.omegas:
        omega = int(omega)
        lo, hi = max(0, -omega), min(n, n - omega)
        c = np.diagonal(basis.fc, offset=omega)
        jumps.append((lo, hi, omega, coeffs.a_f(omega), coeffs.a_g(omega), np.outer(c, c)))

    def dissipator(rho: np.ndarray) -> np.ndarray:
        out = damping * rho
        rho0 = rho[:n, :n]
        rho1 = rho[n:, n:]
        for lo, hi, omega, a_f, a_g, cc in jumps:
            # D†ρD feeds level 1, DρD† feeds level 0
            if a_f:
                out[n + lo + omega:n + hi + omega, n + lo + omega:n + hi + omega] += a_f * cc * rho0[lo:hi, lo:hi]
            if a_g:
                out[lo:hi, lo:hi] += a_g * cc * rho1[lo + omega:hi + omega, lo + omega:hi + omega]
        return out

    shift = corrected_hamiltonian(basis, coeffs)
    logger.debug(f"Built Lindblad generator n_max={n}, scale={params.scale:.3e}")
    return Generator(
        kind=GeneratorKind.LINDBLAD,
        basis=basis,
        coeffs=coeffs,
        scale=params.scale,
        hamiltonian=shift.total(basis),
        dissipator=dissipator,
    )


def secular_project(gen: Generator) -> Generator:
    """
    Keep only the ω = ω′ terms of a Redfield generator.

    Assembled term by term from the ω-resolved Redfield form, so it is an
    independent construction of the Lindblad generator; the b-parts appear as
    −i·b·[DD†, ρ] and +i·b·[D†D, ρ] inside the dissipator.
    """
    if gen.kind is not GeneratorKind.REDFIELD or gen.coeffs is None:
        raise GeneratorError(f"secular projection needs a Redfield generator, got {gen.kind.value}")
    basis, coeffs = gen.basis, gen.coeffs

    terms = []
    for omega in basis.omegas:
        d = d_operator(basis, int(omega))
        d_h = d.conj().T
        terms.append((d, d_h, d @ d_h, d_h @ d, coeffs.F(int(omega)), coeffs.G(int(omega))))

    def dissipator(rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho)
        for d, d_h, dd_h, d_hd, f, g in terms:
            jump_up = d_h @ rho @ d
            jump_down = d @ rho @ d_h
            out -= f * (dd_h @ rho - jump_up) + np.conj(f) * (rho @ dd_h - jump_up)
            out -= g * (rho @ d_hd - jump_down) + np.conj(g) * (d_hd @ rho - jump_down)
        return out

    return Generator(
        kind=GeneratorKind.LINDBLAD,
        basis=basis,
        coeffs=coeffs,
        scale=gen.scale,
        hamiltonian=gen.hamiltonian.copy(),
        dissipator=dissipator,
    )


def dissipative_part(gen: Generator) -> Generator:
    """The generator minus the bare −(i/ε)[Ĥ_s, ·] term."""
    return replace(gen, hamiltonian=gen.hamiltonian - gen.basis.energies)


def build_rate_matrix(basis: LadderBasis, coeffs: CoeffSet, params: Optional[ModelParams] = None) -> RateMatrix:
    params = _check_inputs(basis, coeffs, params)
    fc2 = basis.fc ** 2
    k01 = params.scale * _omega_grid(coeffs, basis, "a_F") * fc2
    k10 = params.scale * (_omega_grid(coeffs, basis, "a_G") * fc2).T
    return RateMatrix(k01=k01, k10=k10)


def stationary_populations(rates: RateMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (λ, θ) balancing the rate equations."""
    kernel = null_space(rates.generator_matrix())
    if kernel.shape[1] != 1:
        raise GeneratorError(f"rate equations have a {kernel.shape[1]}-dimensional stationary space")
    vector = kernel[:, 0]
    vector = vector / vector.sum()
    vector = np.clip(vector, 0.0, None)
    vector /= vector.sum()
    n = rates.n_max
    return vector[:n], vector[n:]


def matricize(gen: Generator) -> np.ndarray:
    """
    Dense superoperator M with vec(apply(ρ)) = M·vec(ρ), vec in row-major order.

    Column j is the action on the j-th matrix unit. The map is complex-linear,
    so no Hermitian pairing of matrix units is needed.
    """
    n = gen.basis.n_max
    if n > MATRICIZE_MAX_N:
        raise GeneratorError(f"matricize is limited to n_max <= {MATRICIZE_MAX_N}, got {n}")
    dim = gen.dim
    size = dim * dim
    out = np.empty((size, size), dtype=complex)
    unit = np.zeros((dim, dim), dtype=complex)
    for j in range(size):
        row, col = divmod(j, dim)
        unit[row, col] = 1.0
        out[:, j] = gen.apply_matrix(unit).reshape(-1)
        unit[row, col] = 0.0
    return out


def export_superoperator(matrix: np.ndarray, path: str | Path) -> Path:
    """Write a dense complex matrix: one ASCII header line, then little-endian complex128 row-major data."""
    matrix = np.ascontiguousarray(matrix, dtype="<c16")
    if matrix.ndim != 2:
        raise GeneratorError(f"expected a 2-D matrix, got {matrix.ndim} dimensions")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"{SUPEROP_MAGIC} v1 rows={matrix.shape[0]} cols={matrix.shape[1]} dtype=complex128 order=row-major\n"
    with path.open("wb") as handle:
        handle.write(header.encode("ascii"))
        handle.write(matrix.tobytes(order="C"))
    logger.info(f"Superoperator written to {path}")
    return path


def read_superoperator(path: str | Path) -> np.ndarray:
    with Path(path).open("rb") as handle:
        header = handle.readline().decode("ascii").split()
        if not header or header[0] != SUPEROP_MAGIC:
            raise GeneratorError(f"{path} is not a superoperator dump")
        fields = dict(item.split("=", 1) for item in header[2:])
        rows, cols = int(fields["rows"]), int(fields["cols"])
        data = np.frombuffer(handle.read(), dtype="<c16")
    if data.size != rows * cols:
        raise GeneratorError(f"{path}: expected {rows * cols} entries, found {data.size}")
    return data.reshape(rows, cols).copy()
