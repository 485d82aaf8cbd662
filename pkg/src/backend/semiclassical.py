"""
Phase-space (Wigner) picture: eigenprojector Wigner functions, hopping-rate
fields, and the classical master equations

    ∂_t ϱ₀ = {H₀, ϱ₀} − γ₀→₁ϱ₀ + γ₁→₀ϱ₁
    ∂_t ϱ₁ = {H₁, ϱ₁} + γ₀→₁ϱ₀ − γ₁→₀ϱ₁

with {h, g} = ∂_x h ∂_p g − ∂_p h ∂_x g. The LCME variant uses eigenstate
resolved rate fields and adds the α²-corrected Hamiltonian fields.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import eval_laguerre

from src.backend.basis import (
    BlockDensity,
    LadderBasis,
    ModelParams,
    build_basis,
    hermite_functions,
)
from src.backend.bath import CoeffSet, DiscreteBath, WideBand, coeffs_wideband, fermi
from src.backend.errors import BasisError, BathError, GridError, IntegralError, PropagationError
from src.backend.generators import build_rate_matrix, corrected_hamiltonian, escape_rates

logger = logging.getLogger(__name__)

MIN_POINTS = 16
SUPPORT_MARGIN = 6.0  # in units of √ε
Y_STEP = 1.0 / 20.0  # in units of √ε
Y_RANGE = 10.0  # in units of √ε
TAIL_WARNING = 1e-3
MASS_ABORT = 1e-4
SEGMENT_TOLERANCE = 1e-14
MAX_SEGMENTS = 200


@dataclass(frozen=True)
class PhaseGrid:
    """Cell-centred rectangular grid on [x_min, x_max] × [p_min, p_max]."""
    x_min: float
    x_max: float
    p_min: float
    p_max: float
    nx: int
    n_p: int

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.p_min < self.p_max):
            raise GridError(f"grid bounds not ordered: x [{self.x_min}, {self.x_max}], p [{self.p_min}, {self.p_max}]")
        if self.nx < MIN_POINTS or self.n_p < MIN_POINTS:
            raise GridError(f"grid needs at least {MIN_POINTS} points per axis, got {self.nx}x{self.n_p}")

    @classmethod
    def symmetric(cls, half_width: float, points: int, center: float = 0.0) -> "PhaseGrid":
        return cls(center - half_width, center + half_width, -half_width, half_width, points, points)

    @classmethod
    def for_model(cls, params: ModelParams, k_max: int, points: int = 128, margin: float = SUPPORT_MARGIN) -> "PhaseGrid":
        """Smallest grid meeting the support rule for levels up to k_max on both surfaces."""
        root = math.sqrt(params.epsilon)
        reach = math.sqrt(params.epsilon * (2 * k_max + 1)) + margin * root
        left = min(0.0, -params.displacement)
        right = max(0.0, -params.displacement)
        return cls(left - reach, right + reach, -reach, reach, points, points)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def x(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def p(self) -> np.ndarray:
        return self.p_min + (np.arange(self.n_p) + 0.5) * self.dp

    @property
    def shape(self) -> tuple[int, int]:
        return self.nx, self.n_p

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.p, indexing="ij")

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.dx * self.dp)

    def check_resolution(self, eps: float) -> None:
        limit = 0.5 * math.sqrt(eps)
        if self.dx > limit or self.dp > limit:
            raise GridError(
                f"grid spacing ({self.dx:.3g}, {self.dp:.3g}) too coarse for epsilon={eps}: need <= {limit:.3g}"
            )

    def check_support(self, params: ModelParams, k: int, m: int) -> None:
        """Bounds must reach SUPPORT_MARGIN·√ε beyond the classical turning points of level k on surface m."""
        root = math.sqrt(params.epsilon)
        reach = math.sqrt(params.epsilon * (2 * k + 1)) + SUPPORT_MARGIN * root
        center = -params.displacement if m == 1 else 0.0
        if (self.x_min > center - reach or self.x_max < center + reach
                or self.p_min > -reach or self.p_max < reach):
            raise GridError(
                f"grid does not cover level k={k}, m={m}: need x in [{center - reach:.3g}, {center + reach:.3g}], "
                f"|p| <= {reach:.3g}"
            )


def _wigner_stack(levels: Sequence[int], grid: PhaseGrid, eps: float, shift: float = 0.0) -> np.ndarray:
    """
    (1/2πε)(|φ_k⟩⟨φ_k|)_W on the grid for each k in `levels`, by trapezoid
    quadrature of the defining y-integral. φ is evaluated at x + shift.
    """
    levels = list(levels)
    top = max(levels)
    root = math.sqrt(eps)
    half = max(Y_RANGE * root, 2.0 * (math.sqrt(eps * (2 * top + 1)) + SUPPORT_MARGIN * root))
    step = Y_STEP * root
    y = np.arange(-half, half + 0.5 * step, step)
    weights = np.full(y.size, step)
    weights[[0, -1]] *= 0.5

    x = grid.x + shift
    plus = x[:, None] + 0.5 * y[None, :]
    minus = x[:, None] - 0.5 * y[None, :]
    phi_plus = hermite_functions(top + 1, plus, eps)
    phi_minus = hermite_functions(top + 1, minus, eps)
    kernel = np.cos(np.outer(y, grid.p) / eps) * weights[:, None]

    out = np.empty((len(levels),) + grid.shape)
    for i, k in enumerate(levels):
        out[i] = (phi_plus[k] * phi_minus[k]) @ kernel
    return out / (2.0 * math.pi * eps)


def wigner_projector(basis: LadderBasis, k: int, m: int, grid: PhaseGrid) -> np.ndarray:
    """Wigner function of Π_k^(m), normalized to unit integral; surface 1 is centred at x = −√2·g."""
    if not 0 <= k < basis.n_max or m not in (0, 1):
        raise BasisError(f"no eigenstate k={k}, m={m} in basis of size {basis.n_max}")
    params = basis.params
    grid.check_resolution(params.epsilon)
    grid.check_support(params, k, m)
    shift = params.displacement if m == 1 else 0.0
    return _wigner_stack([k], grid, params.epsilon, shift)[0]


def wigner_closed_form(k: int, x: np.ndarray, p: np.ndarray, eps: float, shift: float = 0.0) -> np.ndarray:
    """((−1)^k/πε)·e^{−r²/ε}·L_k(2r²/ε) with r² = (x + shift)² + p²."""
    r2 = (np.asarray(x) + shift) ** 2 + np.asarray(p) ** 2
    return (-1) ** k / (math.pi * eps) * np.exp(-r2 / eps) * eval_laguerre(k, 2.0 * r2 / eps)


@dataclass
class PhaseField:
    """Phase-space densities ϱ₀, ϱ₁ on a grid."""
    rho0_w: np.ndarray
    rho1_w: np.ndarray
    grid: PhaseGrid
    time: float = 0.0

    def __post_init__(self) -> None:
        self.rho0_w = np.asarray(self.rho0_w, dtype=float)
        self.rho1_w = np.asarray(self.rho1_w, dtype=float)
        if self.rho0_w.shape != self.grid.shape or self.rho1_w.shape != self.grid.shape:
            raise GridError(f"field shapes {self.rho0_w.shape}, {self.rho1_w.shape} do not match grid {self.grid.shape}")

    @property
    def mass0(self) -> float:
        return self.grid.integrate(self.rho0_w)

    @property
    def mass1(self) -> float:
        return self.grid.integrate(self.rho1_w)

    @property
    def normalization(self) -> float:
        return self.mass0 + self.mass1

    def copy(self) -> "PhaseField":
        return PhaseField(self.rho0_w.copy(), self.rho1_w.copy(), self.grid, self.time)

    @classmethod
    def from_eigenstate(cls, basis: LadderBasis, k: int, m: int, grid: PhaseGrid) -> "PhaseField":
        w = wigner_projector(basis, k, m, grid)
        zero = np.zeros(grid.shape)
        return cls(w, zero, grid) if m == 0 else cls(zero, w, grid)

    @classmethod
    def from_density(cls, basis: LadderBasis, rho: BlockDensity, grid: PhaseGrid, cutoff: float = 1e-14) -> "PhaseField":
        """Σ_k λ_k W_k⁰ and Σ_k θ_k W_k¹ from the diagonal of ρ; coherences are not represented."""
        params = basis.params
        grid.check_resolution(params.epsilon)
        lambdas, thetas = rho.populations()
        fields = []
        for m, weights in ((0, lambdas), (1, thetas)):
            occupied = [k for k in range(basis.n_max) if abs(weights[k]) > cutoff]
            if not occupied:
                fields.append(np.zeros(grid.shape))
                continue
            grid.check_support(params, max(occupied), m)
            shift = params.displacement if m == 1 else 0.0
            stack = _wigner_stack(occupied, grid, params.epsilon, shift)
            fields.append(np.tensordot(weights[occupied], stack, axes=1))
        return cls(fields[0], fields[1], grid)

    @classmethod
    def gaussian(cls, grid: PhaseGrid, eps: float, x0: float = 0.0, p0: float = 0.0, level: int = 0) -> "PhaseField":
        """Coherent-state Wigner function (1/πε)·e^{−((x−x0)² + (p−p0)²)/ε} on one level."""
        x, p = grid.mesh()
        w = np.exp(-((x - x0) ** 2 + (p - p0) ** 2) / eps) / (math.pi * eps)
        zero = np.zeros(grid.shape)
        return cls(w, zero, grid) if level == 0 else cls(zero, w, grid)


class RateVariant(Enum):
    FULL = "full"
    WIDEBAND_HEURISTIC = "wideband-heuristic"
    LCME_EIGENSTATE = "lcme-eigenstate"


@dataclass
class RateField:
    gamma01: np.ndarray
    gamma10: np.ndarray
    variant: RateVariant
    findings: list[str] = field(default_factory=list)


def phase_hamiltonians(params: ModelParams, grid: PhaseGrid) -> tuple[np.ndarray, np.ndarray]:
    """H₀ = p²/2 + x²/2 and H₁ = p²/2 + (x + √2g)²/2 + ε̄₀ sampled at cell centres."""
    x, p = grid.mesh()
    h0 = 0.5 * p ** 2 + 0.5 * x ** 2
    h1 = 0.5 * p ** 2 + 0.5 * (x + params.displacement) ** 2 + params.ebar0
    return h0, h1


def _segment_integral(h, h_inf: float, frequency: float) -> float:
    """∫₀^∞ sin(frequency·u)·h(u) du for h tending to the constant h_inf."""
    head, _ = quad(lambda u: math.sin(frequency * u) * h(u), 0.0, 1.0, epsabs=1e-15, epsrel=1e-12, limit=200)
    tail, _ = quad(lambda u: h(u) - h_inf, 1.0, math.inf, weight="sin", wvar=frequency, epsabs=1e-15, limlst=100)
    return head + tail + h_inf * math.cos(frequency) / frequency


def thermal_kernel_integral(u_gap: float, beta: float, max_segments: int = MAX_SEGMENTS) -> float:
    """
    J(U) = ∫₀^∞ Im[cos(τ/2)^{−2}·e^{−2iU·tan(τ/2)}] / sinh(πτ/β) dτ.

    Each branch of tan(τ/2) is mapped to the real line with u = tan(τ/2), where
    Im K dτ = −2·sin(2Uu) du; branches are summed until they drop below
    SEGMENT_TOLERANCE.
    """
    if u_gap == 0.0:
        return 0.0
    sign = 1.0 if u_gap > 0 else -1.0
    frequency = 2.0 * abs(u_gap)
    scale = math.pi / beta

    def first(u: float) -> float:
        return -2.0 / math.sinh(scale * 2.0 * math.atan(u))

    total = sign * _segment_integral(first, -2.0 / math.sinh(scale * math.pi), frequency)

    for j in range(1, max_segments + 1):
        center = 2.0 * math.pi * j

        def paired(u: float, c: float = center) -> float:
            return -2.0 / math.sinh(scale * (c + 2.0 * math.atan(u))) + 2.0 / math.sinh(scale * (c - 2.0 * math.atan(u)))

        limit = -2.0 / math.sinh(scale * (center + math.pi)) + 2.0 / math.sinh(scale * (center - math.pi))
        piece = sign * _segment_integral(paired, limit, frequency)
        total += piece
        if abs(piece) < SEGMENT_TOLERANCE:
            return total
    raise IntegralError(f"thermal kernel integral for U={u_gap} not converged after {max_segments} segments")


def cme_rates(
    bath: WideBand | DiscreteBath,
    params: ModelParams,
    grid: PhaseGrid,
    variant: RateVariant = RateVariant.WIDEBAND_HEURISTIC,
) -> RateField:
    """
    CME hopping rates γ₀→₁(x), γ₁→₀(x) on the grid (constant in p).

    Heuristic: (α²/ε)·Γ·f(U(x)) and (α²/ε)·Γ·(1 − f(U(x))); a discrete bath
    uses its broadened spectral weight at U(x) in place of Γ. Full: the
    τ-integral with the harmonic kernel for an infinite wide band.
    """
    u_gap = params.energy_gap(grid.x)
    scale = params.scale

    if variant is RateVariant.WIDEBAND_HEURISTIC:
        if isinstance(bath, WideBand):
            occ = fermi(bath.beta, u_gap)
            inside = np.abs(u_gap) <= bath.band
            up = scale * bath.gamma * occ * inside
            down = scale * bath.gamma * (1.0 - occ) * inside
        else:
            occ = fermi(bath.beta, bath.energies)
            delta = (bath.sigma / math.pi) / ((bath.energies[:, None] - u_gap[None, :]) ** 2 + bath.sigma ** 2)
            v2 = bath.couplings[:, None] ** 2
            up = scale * 2.0 * math.pi * np.sum(v2 * occ[:, None] * delta, axis=0)
            down = scale * 2.0 * math.pi * np.sum(v2 * (1.0 - occ)[:, None] * delta, axis=0)
    elif variant is RateVariant.FULL:
        if not isinstance(bath, WideBand) or not math.isinf(bath.band):
            raise BathError("full CME rates are available for the infinite wide-band bath only")
        kernel = np.array([thermal_kernel_integral(float(u), bath.beta) for u in u_gap])
        up = scale * bath.gamma * (0.5 + kernel / bath.beta)
        down = scale * bath.gamma * (0.5 - kernel / bath.beta)
    else:
        raise BathError(f"cme_rates does not build {variant.value} fields; use lcme_rate_fields")

    ones = np.ones(grid.n_p)
    return RateField(gamma01=np.outer(up, ones), gamma10=np.outer(down, ones), variant=variant)


def compare_rate_variants(full: RateField, heuristic: RateField) -> np.ndarray:
    """Pointwise relative deviation |full − heuristic| / max(|heuristic|, tiny) of γ₀→₁."""
    reference = np.maximum(np.abs(heuristic.gamma01), np.finfo(float).tiny)
    deviation = np.abs(full.gamma01 - heuristic.gamma01) / reference
    message = f"full vs heuristic CME rate: max relative deviation {float(np.max(deviation)):.3e}"
    full.findings.append(message)
    logger.warning(message)
    return deviation


def _eigenstate_sum(weights: np.ndarray, stack: np.ndarray, grid: PhaseGrid, label: str,
                    findings: list[str]) -> np.ndarray:
    """Σ_k weights[k]·(2πε W_k) with a tail check on the last term."""
    terms = weights[:, None, None] * stack
    total = terms.sum(axis=0)
    norm = grid.integrate(np.abs(total))
    tail = grid.integrate(np.abs(terms[-1]))
    if norm > 0 and tail > TAIL_WARNING * norm:
        message = f"{label}: last eigenstate carries {tail / norm:.2e} of the field; increase n_max"
        findings.append(message)
        logger.warning(message)
    return total


def _projector_stacks(basis: LadderBasis, grid: PhaseGrid) -> tuple[np.ndarray, np.ndarray]:
    params = basis.params
    grid.check_resolution(params.epsilon)
    levels = range(basis.n_max)
    factor = 2.0 * math.pi * params.epsilon
    w0 = factor * _wigner_stack(levels, grid, params.epsilon)
    w1 = factor * _wigner_stack(levels, grid, params.epsilon, params.displacement)
    return w0, w1


def lcme_rate_fields(basis: LadderBasis, coeffs: CoeffSet, grid: PhaseGrid,
                     stacks: Optional[tuple[np.ndarray, np.ndarray]] = None) -> RateField:
    """
    γ₀→₁ = (α²/ε)·Σ_k κ⁰_k·(Π_k⁰)_W and γ₁→₀ = (α²/ε)·Σ_k κ¹_k·(Π_k¹)_W,
    κ the eigenstate escape weights. Applied as a pointwise exchange.
    """
    w0, w1 = _projector_stacks(basis, grid) if stacks is None else stacks
    kappa0, kappa1 = escape_rates(basis, coeffs)
    scale = basis.params.scale
    findings: list[str] = []
    up = scale * _eigenstate_sum(kappa0, w0, grid, "gamma01", findings)
    down = scale * _eigenstate_sum(kappa1, w1, grid, "gamma10", findings)
    if min(up.min(), down.min()) < 0:
        message = f"LCME rate field takes negative values (min {min(up.min(), down.min()):.3e})"
        findings.append(message)
        logger.warning(message)
    return RateField(gamma01=up, gamma10=down, variant=RateVariant.LCME_EIGENSTATE, findings=findings)


def corrected_hamiltonian_fields(basis: LadderBasis, coeffs: CoeffSet, grid: PhaseGrid,
                                 stacks: Optional[tuple[np.ndarray, np.ndarray]] = None
                                 ) -> tuple[np.ndarray, np.ndarray]:
    """Wigner transforms of the diagonal corrected Hamiltonian on each level (without the α² prefactor)."""
    w0, w1 = _projector_stacks(basis, grid) if stacks is None else stacks
    shift = corrected_hamiltonian(basis, coeffs)
    findings: list[str] = []
    return (
        _eigenstate_sum(shift.diag0, w0, grid, "H0 correction", findings),
        _eigenstate_sum(shift.diag1, w1, grid, "H1 correction", findings),
    )


class Limiter(Enum):
    MINMOD = "minmod"
    VAN_LEER = "van_leer"


def _limited_slope(left: np.ndarray, right: np.ndarray, limiter: Limiter) -> np.ndarray:
    if limiter is Limiter.MINMOD:
        return 0.5 * (np.sign(left) + np.sign(right)) * np.minimum(np.abs(left), np.abs(right))
    product = left * right
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(product > 0, 2.0 * product / (left + right), 0.0)
    return slope


def _advect(q: np.ndarray, velocity: np.ndarray, dt: float, h: float, axis: int, limiter: Limiter) -> np.ndarray:
    """
    One conservative MUSCL upwind step along `axis`.

    `velocity` lives on the interior faces (length n − 1 along `axis`);
    boundary faces carry zero flux.
    """
    q = np.moveaxis(q, axis, 0)
    u = np.moveaxis(velocity, axis, 0)

    diff = np.diff(q, axis=0)
    slope = np.zeros_like(q)
    slope[1:-1] = _limited_slope(diff[:-1], diff[1:], limiter)

    courant = u * dt / h
    from_left = q[:-1] + 0.5 * slope[:-1] * (1.0 - courant)
    from_right = q[1:] - 0.5 * slope[1:] * (1.0 + courant)
    flux = np.where(u > 0, u * from_left, u * from_right)

    out = q.copy()
    out[:-1] -= dt / h * flux
    out[1:] += dt / h * flux
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class Transport:
    """Face velocities (ẋ, ṗ) = (∂_p H, −∂_x H) of one surface."""
    x_faces: np.ndarray
    p_faces: np.ndarray

    @classmethod
    def from_hamiltonian(cls, hamiltonian: np.ndarray, grid: PhaseGrid) -> "Transport":
        dhdx, dhdp = np.gradient(hamiltonian, grid.dx, grid.dp, edge_order=2)
        xdot = dhdp
        pdot = -dhdx
        return cls(
            x_faces=0.5 * (xdot[1:, :] + xdot[:-1, :]),
            p_faces=0.5 * (pdot[:, 1:] + pdot[:, :-1]),
        )

    def max_step(self, grid: PhaseGrid, cfl: float) -> float:
        speed_x = float(np.max(np.abs(self.x_faces))) / grid.dx
        speed_p = float(np.max(np.abs(self.p_faces))) / grid.dp
        fastest = max(speed_x, speed_p)
        return math.inf if fastest == 0 else cfl / fastest


def exchange(rho0: np.ndarray, rho1: np.ndarray, up: np.ndarray, down: np.ndarray,
             dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact solution of the pointwise two-state exchange over dt."""
    total = up + down
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(total > 0, -np.expm1(-total * dt) / total, dt)
    moved = (up * rho0 - down * rho1) * factor
    return rho0 - moved, rho1 + moved


@dataclass(frozen=True)
class SolverConfig:
    t_end: float
    dt: Optional[float] = None  # None picks the largest CFL-stable step
    cfl: float = 0.5
    limiter: Limiter = Limiter.VAN_LEER
    transport: bool = True
    stride: int = 1
    keep_fields: bool = False

    def __post_init__(self) -> None:
        if not self.t_end > 0:
            raise GridError(f"t_end must be > 0, got {self.t_end}")
        if self.dt is not None and not self.dt > 0:
            raise GridError(f"dt must be > 0, got {self.dt}")
        if not 0 < self.cfl <= 1:
            raise GridError(f"CFL number must be in (0, 1], got {self.cfl}")


@dataclass
class PhaseTrajectory:
    times: list[float] = field(default_factory=list)
    mass0: list[float] = field(default_factory=list)
    mass1: list[float] = field(default_factory=list)
    fields: list[PhaseField] = field(default_factory=list)
    final: Optional[PhaseField] = None
    max_mass_drift: float = 0.0
    findings: list[str] = field(default_factory=list)
    dt: float = 0.0  # step actually taken, after rounding to t_end/n_steps
    n_steps: int = 0

    def record(self, state: PhaseField, reference: float, keep: bool) -> None:
        self.times.append(state.time)
        self.mass0.append(state.mass0)
        self.mass1.append(state.mass1)
        self.max_mass_drift = max(self.max_mass_drift, abs(self.mass0[-1] + self.mass1[-1] - reference))
        if keep:
            self.fields.append(state.copy())


def _solve(rates: RateField, h0: np.ndarray, h1: np.ndarray, init: PhaseField, cfg: SolverConfig) -> PhaseTrajectory:
    grid = init.grid
    if h0.shape != grid.shape or h1.shape != grid.shape:
        raise GridError("Hamiltonian arrays do not match the grid")
    if rates.gamma01.shape != grid.shape or rates.gamma10.shape != grid.shape:
        raise GridError("rate fields do not match the grid")
    reference = init.normalization
    if abs(reference - 1.0) > 1e-3:
        raise GridError(f"initial field has normalization {reference:.6g}; expected 1")

    flows = (Transport.from_hamiltonian(h0, grid), Transport.from_hamiltonian(h1, grid))
    stable = min(f.max_step(grid, cfg.cfl) for f in flows) if cfg.transport else math.inf
    if cfg.dt is None:
        dt = min(stable, cfg.t_end / 10.0)
    elif cfg.dt > stable * (1.0 + 1e-12):
        raise GridError(f"dt={cfg.dt:.3g} violates the CFL condition (max {stable:.3g} at CFL {cfg.cfl})")
    else:
        dt = cfg.dt
    n_steps = max(1, int(math.ceil(cfg.t_end / dt - 1e-9)))
    dt = cfg.t_end / n_steps

    state = init.copy()
    traj = PhaseTrajectory(dt=dt, n_steps=n_steps)
    traj.record(state, reference, cfg.keep_fields)
    q0, q1 = state.rho0_w, state.rho1_w

    for step in range(1, n_steps + 1):
        q0, q1 = exchange(q0, q1, rates.gamma01, rates.gamma10, 0.5 * dt)
        if cfg.transport:
            q0 = _strang_transport(q0, flows[0], dt, grid, cfg.limiter)
            q1 = _strang_transport(q1, flows[1], dt, grid, cfg.limiter)
        q0, q1 = exchange(q0, q1, rates.gamma01, rates.gamma10, 0.5 * dt)

        if not (np.all(np.isfinite(q0)) and np.all(np.isfinite(q1))):
            raise PropagationError("non-finite phase-space field", time=step * dt, last_state=state)
        if step % cfg.stride == 0 or step == n_steps:
            state = PhaseField(q0, q1, grid, step * dt)
            traj.record(state, reference, cfg.keep_fields)
            if traj.max_mass_drift > MASS_ABORT:
                raise PropagationError(f"mass drift {traj.max_mass_drift:.3e}", time=state.time, last_state=state)

    traj.final = PhaseField(q0, q1, grid, cfg.t_end)
    logger.info(
        f"Phase-space solve to t={cfg.t_end:g} in {n_steps} steps (dt={dt:.3g}); "
        f"masses {traj.mass0[-1]:.6f}/{traj.mass1[-1]:.6f}, drift {traj.max_mass_drift:.2e}"
    )
    return traj


def _strang_transport(q: np.ndarray, flow: Transport, dt: float, grid: PhaseGrid, limiter: Limiter) -> np.ndarray:
    q = _advect(q, flow.x_faces, 0.5 * dt, grid.dx, 0, limiter)
    q = _advect(q, flow.p_faces, dt, grid.dp, 1, limiter)
    return _advect(q, flow.x_faces, 0.5 * dt, grid.dx, 0, limiter)


def solve_cme(fields: RateField, h0: np.ndarray, h1: np.ndarray, init: PhaseField,
              grid: PhaseGrid, cfg: SolverConfig) -> PhaseTrajectory:
    """Transport under {H_m, ·} plus pointwise hopping, Strang-split."""
    if init.grid != grid:
        raise GridError("initial field lives on a different grid")
    traj = _solve(fields, h0, h1, init, cfg)
    traj.findings.extend(fields.findings)
    return traj


def solve_lcme(basis: LadderBasis, coeffs: CoeffSet, init: PhaseField, grid: PhaseGrid,
               cfg: SolverConfig, include_corrections: bool = True) -> PhaseTrajectory:
    """
    LCME: eigenstate-resolved hopping fields, transport under H_m + α²·ℋ_m
    with ℋ_m the Wigner-transformed corrected Hamiltonian.
    """
    if init.grid != grid:
        raise GridError("initial field lives on a different grid")
    stacks = _projector_stacks(basis, grid)
    rates = lcme_rate_fields(basis, coeffs, grid, stacks)
    h0, h1 = phase_hamiltonians(basis.params, grid)
    if include_corrections and basis.params.alpha != 0:
        c0, c1 = corrected_hamiltonian_fields(basis, coeffs, grid, stacks)
        h0 = h0 + basis.params.alpha ** 2 * c0
        h1 = h1 + basis.params.alpha ** 2 * c1
    traj = _solve(rates, h0, h1, init, cfg)
    traj.findings.extend(rates.findings)
    return traj


def liouville_residual(grid: PhaseGrid, eps: float, t_end: float = 1.0,
                       limiter: Limiter = Limiter.VAN_LEER) -> float:
    """L² distance between a rotation-invariant Gaussian under pure H₀ transport and its initial value."""
    init = PhaseField.gaussian(grid, eps)
    h0 = 0.5 * (grid.mesh()[0] ** 2 + grid.mesh()[1] ** 2)
    zero = RateField(np.zeros(grid.shape), np.zeros(grid.shape), RateVariant.WIDEBAND_HEURISTIC)
    traj = _solve(zero, h0, h0, init, SolverConfig(t_end=t_end, limiter=limiter))
    return math.sqrt(grid.integrate((traj.final.rho0_w - init.rho0_w) ** 2))


@dataclass(frozen=True)
class BlockadeRow:
    g: float
    huang_rhys: float
    rate_00: float
    escape_0: float


def blockade_table(g_values: Iterable[float], params: ModelParams, bath: WideBand,
                   n_max: int = 40) -> list[BlockadeRow]:
    """0→0 hopping rate and total escape rate of |φ_0⁰,0⟩ for each coupling g."""
    rows = []
    for g in g_values:
        model = ModelParams(epsilon=params.epsilon, alpha=params.alpha, g=g, ebar0=params.ebar0, beta=params.beta)
        basis = build_basis(model, n_max)
        coeffs = coeffs_wideband(bath, model.epsilon, basis.omegas, model.ebar0)
        rates = build_rate_matrix(basis, coeffs)
        rows.append(BlockadeRow(g=g, huang_rhys=model.huang_rhys, rate_00=float(rates.k01[0, 0]),
                                escape_0=float(rates.escape0[0])))
    return rows


def blockade_slope(rows: Sequence[BlockadeRow]) -> float:
    """Least-squares slope of log(rate_00) against g²/ε."""
    x = np.array([r.huang_rhys for r in rows])
    y = np.log([r.rate_00 for r in rows])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def phase_field_to_csv(state: PhaseField, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = state.grid
    x, p = grid.mesh()
    with path.open("w", newline="") as handle:
        handle.write(
            f"# grid x_min={grid.x_min!r} x_max={grid.x_max!r} p_min={grid.p_min!r} "
            f"p_max={grid.p_max!r} nx={grid.nx} np={grid.n_p} time={state.time!r}\n"
        )
        writer = csv.writer(handle)
        writer.writerow(["x", "p", "rho0", "rho1"])
        for row in zip(x.ravel(), p.ravel(), state.rho0_w.ravel(), state.rho1_w.ravel()):
            writer.writerow([repr(float(v)) for v in row])
    return path


def rate_field_to_csv(rates: RateField, grid: PhaseGrid, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x, p = grid.mesh()
    with path.open("w", newline="") as handle:
        handle.write(
            f"# grid x_min={grid.x_min!r} x_max={grid.x_max!r} p_min={grid.p_min!r} "
            f"p_max={grid.p_max!r} nx={grid.nx} np={grid.n_p} variant={rates.variant.value}\n"
        )
        writer = csv.writer(handle)
        writer.writerow(["x", "p", "gamma01", "gamma10"])
        for row in zip(x.ravel(), p.ravel(), rates.gamma01.ravel(), rates.gamma10.ravel()):
            writer.writerow([repr(float(v)) for v in row])
    return path
