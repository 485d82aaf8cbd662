"""
Truncated two-ladder eigenbasis of the system Hamiltonian.

The molecular Hilbert space L²(R) ⊗ span{|0⟩, |1⟩} is truncated to n_max
harmonic levels per electronic state. Vectors are ordered as
[|φ_0⁰,0⟩ … |φ_{n-1}⁰,0⟩, |φ_0¹,1⟩ … |φ_{n-1}¹,1⟩], so every operator is a
2·n_max square matrix whose upper-left block acts on level |0⟩.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import eval_genlaguerre, gammaln

from src.backend.errors import BasisError

logger = logging.getLogger(__name__)

# α²/ε above this is outside the weak-coupling regime the equations assume
WEAK_COUPLING_LIMIT = 0.1
DEFAULT_N_MAX = 40


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless physical configuration of the model."""
    epsilon: float  # semiclassical parameter ε
    alpha: float  # system-bath coupling α
    g: float  # electron-phonon coupling
    ebar0: float = 0.0  # renormalized energy ε̄₀
    beta: float = 1.0  # inverse temperature

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise BasisError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.beta > 0:
            raise BasisError(f"beta must be > 0, got {self.beta}")
        if self.alpha < 0:
            raise BasisError(f"alpha must be >= 0, got {self.alpha}")
        if self.alpha ** 2 / self.epsilon >= WEAK_COUPLING_LIMIT:
            logger.warning(
                f"alpha^2/epsilon = {self.alpha ** 2 / self.epsilon:.3g} is outside "
                f"the weak-coupling regime (< {WEAK_COUPLING_LIMIT})"
            )

    @property
    def scale(self) -> float:
        """Dissipative prefactor α²/ε."""
        return self.alpha ** 2 / self.epsilon

    @property
    def relaxation_time(self) -> float:
        """τ_R = ε/α². Diagnostic only."""
        if self.alpha == 0:
            return math.inf
        return self.epsilon / self.alpha ** 2

    @property
    def displacement(self) -> float:
        """Center offset √2·g between the two potential surfaces."""
        return math.sqrt(2.0) * self.g

    @property
    def huang_rhys(self) -> float:
        """g²/ε, the exponent of the Franck-Condon blockade."""
        return self.g ** 2 / self.epsilon

    def energy_gap(self, x: np.ndarray | float) -> np.ndarray | float:
        """U(x) = √2·g·x + g² + ε̄₀."""
        return self.displacement * x + self.g ** 2 + self.ebar0


@dataclass(frozen=True)
class LadderBasis:
    """Truncated eigenbasis with Franck-Condon overlaps fc[n][m] = ⟨φ_n⁰|φ_m¹⟩."""
    n_max: int
    params: ModelParams
    fc: np.ndarray
    energies0: np.ndarray
    energies1: np.ndarray

    @property
    def dim(self) -> int:
        return 2 * self.n_max

    @property
    def omegas(self) -> np.ndarray:
        """Every jump size reachable inside the truncation."""
        return np.arange(-(self.n_max - 1), self.n_max)

    @property
    def energies(self) -> np.ndarray:
        return np.concatenate([self.energies0, self.energies1])

    def completeness_defect(self) -> np.ndarray:
        """1 − Σ_m fc[n][m]² for each row n."""
        return 1.0 - np.sum(self.fc ** 2, axis=1)


def _franck_condon_table(params: ModelParams, n: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Closed-form overlaps for broadcastable integer arrays n, m."""
    n = np.asarray(n, dtype=np.int64)
    m = np.asarray(m, dtype=np.int64)
    if np.any(n < 0) or np.any(m < 0):
        raise BasisError("level indices must be non-negative")

    if params.g == 0:
        return (n == m).astype(float)

    lo = np.minimum(n, m)
    hi = np.maximum(n, m)
    s = params.huang_rhys
    ratio = params.g / math.sqrt(params.epsilon)

    # log-space prefactor keeps √(N!/M!)·ratio^(M-N) finite for large ladders
    log_mag = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1)) - 0.5 * s + (hi - lo) * math.log(abs(ratio))
    sign = np.where((n - lo) % 2 == 0, 1.0, -1.0)
    if ratio < 0:
        sign = sign * np.where((hi - lo) % 2 == 0, 1.0, -1.0)
    laguerre = eval_genlaguerre(lo, hi - lo, s)
    with np.errstate(over="ignore", invalid="ignore"):
        value = sign * np.exp(log_mag) * laguerre

    if not np.all(np.isfinite(value)):
        raise BasisError(
            f"non-finite Franck-Condon factor for g={params.g}, epsilon={params.epsilon}"
        )
    return value


def franck_condon(params: ModelParams, n: int, m: int) -> float:
    """
    Overlap ⟨φ_n⁰|φ_m¹⟩ between eigenstates of the two displaced oscillators.

    Uses the generalized-Laguerre closed form with N = min(n, m),
    M = max(n, m) and sign (−1)^(n−N).
    """
    return float(_franck_condon_table(params, np.array(n), np.array(m)))


def build_basis(params: ModelParams, n_max: int = DEFAULT_N_MAX) -> LadderBasis:
    """Tabulate energies and the Franck-Condon matrix for n_max levels per ladder."""
    if n_max < 2:
        raise BasisError(f"n_max must be >= 2, got {n_max}")

    k = np.arange(n_max)
    energies0 = params.epsilon * (k + 0.5)
    energies1 = energies0 + params.ebar0
    fc = _franck_condon_table(params, k[:, None], k[None, :])

    for array in (fc, energies0, energies1):
        array.setflags(write=False)

    logger.debug(f"Built ladder basis n_max={n_max}, g={params.g}, epsilon={params.epsilon}")
    return LadderBasis(n_max=n_max, params=params, fc=fc, energies0=energies0, energies1=energies1)


def hamiltonian_matrix(basis: LadderBasis) -> np.ndarray:
    """Ĥ_s in its eigenbasis (diagonal)."""
    return np.diag(basis.energies).astype(complex)


def annihilation_matrix(basis: LadderBasis) -> np.ndarray:
    """d̂ restricted to the truncated basis: |φ_m¹,1⟩ → Σ_k fc[k][m]·|φ_k⁰,0⟩."""
    n = basis.n_max
    d = np.zeros((basis.dim, basis.dim), dtype=complex)
    d[:n, n:] = basis.fc
    return d


def d_operator(basis: LadderBasis, omega: int) -> np.ndarray:
    """
    Eigen-operator D(ω): sends |φ_{k+ω}¹,1⟩ to fc[k][k+ω]·|φ_k⁰,0⟩.

    Out-of-range ω gives the zero operator. The adjoint D†(ω) is the
    conjugate transpose of the returned matrix.
    """
    n = basis.n_max
    d = np.zeros((basis.dim, basis.dim), dtype=complex)
    if abs(omega) >= n:
        return d
    k = np.arange(max(0, -omega), min(n, n - omega))
    d[k, n + k + omega] = basis.fc[k, k + omega]
    return d


def commutator_check(basis: LadderBasis, omega: int) -> float:
    """
    Frobenius norm of [Ĥ_s, D(ω)] + εω·D(ω) on interior indices.

    Vanishes identically for ε̄₀ = 0; for ε̄₀ ≠ 0 it equals ε̄₀·‖D(ω)‖_F.
    """
    n = basis.n_max
    h = hamiltonian_matrix(basis)
    d = d_operator(basis, omega)
    residual = h @ d - d @ h + basis.params.epsilon * omega * d

    interior = n - abs(omega)
    if interior <= 0:
        return 0.0
    rows = np.arange(max(0, -omega), max(0, -omega) + interior)
    block = residual[np.ix_(rows, n + rows + omega)]
    return float(np.linalg.norm(block))


def projector(basis: LadderBasis, k: int, m: int) -> np.ndarray:
    """Π_k^(m) = |φ_k^m, m⟩⟨φ_k^m, m|."""
    if not 0 <= k < basis.n_max or m not in (0, 1):
        raise BasisError(f"no eigenstate k={k}, m={m} in basis of size {basis.n_max}")
    p = np.zeros((basis.dim, basis.dim), dtype=complex)
    index = k + m * basis.n_max
    p[index, index] = 1.0
    return p


def hermite_functions(k_max: int, x: np.ndarray, eps: float, weighted: bool = True) -> np.ndarray:
    """
    Normalized eigenfunctions φ_k⁰(x) for k < k_max, shape (k_max, *x.shape).

    Stable three-term recurrence with the Gaussian folded into the seed.
    With `weighted=False` the Gaussian is left out, which is the form
    Gauss-Hermite nodes need.
    """
    x = np.asarray(x, dtype=float)
    xi = x / math.sqrt(eps)
    out = np.empty((k_max,) + x.shape)
    out[0] = (math.pi * eps) ** -0.25 * (np.exp(-0.5 * xi ** 2) if weighted else np.ones_like(xi))
    if k_max > 1:
        out[1] = math.sqrt(2.0) * xi * out[0]
    for k in range(1, k_max - 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * xi * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def wavefunction(k: int, x: np.ndarray, eps: float, shift: float = 0.0) -> np.ndarray:
    """φ_k(x + shift); shift = √2·g gives the level-|1⟩ eigenfunction φ_k¹."""
    x = np.asarray(x, dtype=float)
    return hermite_functions(k + 1, x + shift, eps)[k]


def franck_condon_quadrature(params: ModelParams, n: int, m: int, order: Optional[int] = None) -> float:
    """
    ⟨φ_n⁰|φ_m¹⟩ by Gauss-Hermite quadrature, φ_m¹(x) = φ_m⁰(x + √2·g).

    Exact for order > (n + m)/2; used as the oracle for `franck_condon`.
    """
    eps = params.epsilon
    d = params.displacement
    if order is None:
        order = max(n, m) + 40
    t, w = hermgauss(order)
    root = math.sqrt(eps)
    xi0 = t - d / (2.0 * root)
    xi1 = t + d / (2.0 * root)
    top = max(n, m) + 1
    h0 = hermite_functions(top, root * xi0, eps, weighted=False)[n]
    h1 = hermite_functions(top, root * xi1, eps, weighted=False)[m]
    return float(root * math.exp(-d * d / (4.0 * eps)) * np.sum(w * h0 * h1))


@dataclass
class BlockDensity:
    """
    Density operator in block form.

    rho0 = ⟨0|ρ|0⟩, rho1 = ⟨1|ρ|1⟩ and rho01 = ⟨0|ρ|1⟩, each n_max × n_max
    in the ladder eigenbasis.
    """
    rho0: np.ndarray
    rho1: np.ndarray
    rho01: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.rho0 = np.asarray(self.rho0, dtype=complex)
        self.rho1 = np.asarray(self.rho1, dtype=complex)
        if self.rho01 is None:
            self.rho01 = np.zeros_like(self.rho0)
        else:
            self.rho01 = np.asarray(self.rho01, dtype=complex)
        shapes = {self.rho0.shape, self.rho1.shape, self.rho01.shape}
        if len(shapes) != 1 or self.rho0.ndim != 2 or self.rho0.shape[0] != self.rho0.shape[1]:
            raise BasisError(f"inconsistent block shapes: {sorted(shapes)}")

    @property
    def n_max(self) -> int:
        return self.rho0.shape[0]

    def to_matrix(self) -> np.ndarray:
        n = self.n_max
        full = np.zeros((2 * n, 2 * n), dtype=complex)
        full[:n, :n] = self.rho0
        full[n:, n:] = self.rho1
        full[:n, n:] = self.rho01
        full[n:, :n] = self.rho01.conj().T
        return full

    @classmethod
    def from_matrix(cls, full: np.ndarray) -> "BlockDensity":
        full = np.asarray(full, dtype=complex)
        if full.ndim != 2 or full.shape[0] != full.shape[1] or full.shape[0] % 2:
            raise BasisError(f"expected an even square matrix, got shape {full.shape}")
        n = full.shape[0] // 2
        return cls(rho0=full[:n, :n].copy(), rho1=full[n:, n:].copy(), rho01=full[:n, n:].copy())

    def trace(self) -> float:
        return float(np.real(np.trace(self.rho0) + np.trace(self.rho1)))

    def populations(self) -> tuple[np.ndarray, np.ndarray]:
        """(λ_k, θ_k): diagonal weights on the two ladders."""
        return np.real(np.diag(self.rho0)).copy(), np.real(np.diag(self.rho1)).copy()

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        full = self.to_matrix()
        return bool(np.linalg.norm(full - full.conj().T) <= tol * max(1.0, np.linalg.norm(full)))

    @classmethod
    def eigenstate(cls, n_max: int, k: int, m: int) -> "BlockDensity":
        """Pure eigenstate Π_k^(m)."""
        if not 0 <= k < n_max or m not in (0, 1):
            raise BasisError(f"no eigenstate k={k}, m={m} in basis of size {n_max}")
        weights = np.zeros(n_max)
        weights[k] = 1.0
        zero = np.zeros(n_max)
        return cls.diagonal(weights, zero) if m == 0 else cls.diagonal(zero, weights)

    @classmethod
    def diagonal(cls, lambdas: np.ndarray, thetas: np.ndarray) -> "BlockDensity":
        """Diagonal state with populations λ_k on |0⟩ and θ_k on |1⟩."""
        lambdas = np.asarray(lambdas, dtype=float)
        thetas = np.asarray(thetas, dtype=float)
        if lambdas.shape != thetas.shape:
            raise BasisError("population vectors must have equal length")
        return cls(rho0=np.diag(lambdas), rho1=np.diag(thetas))

    @classmethod
    def thermal(cls, basis: LadderBasis) -> "BlockDensity":
        """Gibbs state of Ĥ_s at the model's β, restricted to the basis."""
        energies = basis.energies
        logw = -basis.params.beta * (energies - energies.min())
        weights = np.exp(logw)
        weights /= weights.sum()
        n = basis.n_max
        return cls.diagonal(weights[:n], weights[n:])
