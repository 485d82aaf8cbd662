"""
Fermionic bath and the half-Fourier coefficients of its correlation functions.

F(ω) = a_F(ω)/2 + i·b_F(ω) and G(ω) = a_G(ω)/2 + i·b_G(ω) are evaluated at
the Bohr frequency x = εω + ε̄₀ of the D(ω) transitions. The chemical
potential is fixed at zero.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from src.backend.errors import BathError

logger = logging.getLogger(__name__)

PV_EPSABS = 1e-11
PV_EPSREL = 1e-10
PV_LIMIT = 500

# default discrete broadening, in level spacings
UNIFORM_BROADENING = 2.0


def fermi(beta: float, z: np.ndarray | float) -> np.ndarray | float:
    """Fermi-Dirac occupation 1/(1 + e^{βz}), overflow-safe."""
    if not beta > 0:
        raise BathError(f"beta must be > 0, got {beta}")
    return expit(-beta * np.asarray(z, dtype=float)) if np.ndim(z) else float(expit(-beta * z))


@dataclass(frozen=True)
class DiscreteBath:
    """Finite set of bath levels E_k with real couplings V_k."""
    energies: np.ndarray
    couplings: np.ndarray
    beta: float
    sigma: float

    def __post_init__(self) -> None:
        energies = np.asarray(self.energies, dtype=float)
        couplings = np.asarray(self.couplings, dtype=float)
        if energies.ndim != 1 or energies.shape != couplings.shape:
            raise BathError("energies and couplings must be 1-D arrays of equal length")
        if energies.size == 0:
            raise BathError("bath needs at least one level")
        if not self.sigma > 0:
            raise BathError(f"broadening sigma must be > 0, got {self.sigma}")
        if not self.beta > 0:
            raise BathError(f"beta must be > 0, got {self.beta}")
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "couplings", couplings)

    @property
    def levels(self) -> list[tuple[float, float]]:
        return list(zip(self.energies.tolist(), self.couplings.tolist()))

    @property
    def n_levels(self) -> int:
        return int(self.energies.size)


@dataclass(frozen=True)
class WideBand:
    """Constant level width Γ on the band [−D, D] (D may be infinite)."""
    gamma: float
    beta: float
    band: float = math.inf

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise BathError(f"Gamma must be > 0, got {self.gamma}")
        if not self.band > 0:
            raise BathError(f"band half-width must be > 0, got {self.band}")
        if not self.beta > 0:
            raise BathError(f"beta must be > 0, got {self.beta}")


def uniform_spacing(n_levels: int, e_min: float, e_max: float) -> float:
    if n_levels < 1 or not e_max > e_min:
        raise BathError(f"bad uniform bath: n_levels={n_levels}, range=[{e_min}, {e_max}]")
    return (e_max - e_min) / n_levels


def uniform_bath(
    n_levels: int,
    e_min: float,
    e_max: float,
    gamma: float,
    beta: float,
    sigma: Optional[float] = None,
) -> DiscreteBath:
    """
    Equally spaced levels on [e_min, e_max] matched to a wide band of width Γ.

    With spacing ΔE the continuum normalization 2π·V²/ΔE = Γ gives
    V² = Γ·ΔE/(2π). Default broadening is two level spacings.
    """
    spacing = uniform_spacing(n_levels, e_min, e_max)
    energies = e_min + (np.arange(n_levels) + 0.5) * spacing
    couplings = np.full(n_levels, math.sqrt(gamma * spacing / (2.0 * math.pi)))
    return DiscreteBath(
        energies=energies,
        couplings=couplings,
        beta=beta,
        sigma=UNIFORM_BROADENING * spacing if sigma is None else sigma,
    )


@dataclass(frozen=True)
class CoeffSet:
    """a/b coefficient tables over an integer ω range."""
    omegas: np.ndarray
    a_F: np.ndarray
    b_F: np.ndarray
    a_G: np.ndarray
    b_G: np.ndarray
    eps: float
    shift: float = 0.0
    outside_band: tuple[int, ...] = ()
    b_regularized: bool = False
    source: str = ""
    _index: dict[int, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        omegas = np.asarray(self.omegas, dtype=np.int64)
        object.__setattr__(self, "omegas", omegas)
        for name in ("a_F", "b_F", "a_G", "b_G"):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != omegas.shape:
                raise BathError(f"{name} has shape {values.shape}, expected {omegas.shape}")
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        self._index.update({int(w): i for i, w in enumerate(omegas)})

    def covers(self, omegas: Iterable[int]) -> bool:
        return all(int(w) in self._index for w in omegas)

    def table(self, name: str, omegas: Iterable[int]) -> np.ndarray:
        """Named coefficient (a_F, b_F, a_G or b_G) at each ω in order."""
        values = getattr(self, name)
        try:
            return np.array([values[self._index[int(w)]] for w in omegas], dtype=float)
        except KeyError as exc:
            raise BathError(f"omega={exc.args[0]} not tabulated") from None

    def _pick(self, table: np.ndarray, omega: int) -> float:
        try:
            return float(table[self._index[int(omega)]])
        except KeyError:
            raise BathError(f"omega={omega} not tabulated") from None

    def a_f(self, omega: int) -> float:
        return self._pick(self.a_F, omega)

    def a_g(self, omega: int) -> float:
        return self._pick(self.a_G, omega)

    def b_f(self, omega: int) -> float:
        return self._pick(self.b_F, omega)

    def b_g(self, omega: int) -> float:
        return self._pick(self.b_G, omega)

    def F(self, omega: int) -> complex:
        """F(ω) = a_F/2 + i·b_F."""
        return 0.5 * self.a_f(omega) + 1j * self.b_f(omega)

    def G(self, omega: int) -> complex:
        """G(ω) = a_G/2 + i·b_G."""
        return 0.5 * self.a_g(omega) + 1j * self.b_g(omega)

    def frequencies(self) -> np.ndarray:
        """Bohr frequencies εω + ε̄₀ at which the tables were evaluated."""
        return self.eps * self.omegas + self.shift

    def restrict(self, omegas: Iterable[int]) -> "CoeffSet":
        rows = [self._index[int(w)] for w in omegas]
        return CoeffSet(
            omegas=self.omegas[rows],
            a_F=self.a_F[rows],
            b_F=self.b_F[rows],
            a_G=self.a_G[rows],
            b_G=self.b_G[rows],
            eps=self.eps,
            shift=self.shift,
            outside_band=tuple(w for w in self.outside_band if w in set(int(x) for x in omegas)),
            b_regularized=self.b_regularized,
            source=self.source,
        )

    def scaled(self, a_factor: float = 1.0, b_factor: float = 1.0) -> "CoeffSet":
        """Copy with the a- and b-tables multiplied; b_factor=0 drops the energy shifts."""
        return CoeffSet(
            omegas=self.omegas,
            a_F=self.a_F * a_factor,
            b_F=self.b_F * b_factor,
            a_G=self.a_G * a_factor,
            b_G=self.b_G * b_factor,
            eps=self.eps,
            shift=self.shift,
            outside_band=self.outside_band,
            b_regularized=self.b_regularized,
            source=self.source,
        )


def coeffs_discrete(
    bath: DiscreteBath,
    eps: float,
    omegas: Iterable[int],
    shift: float = 0.0,
) -> CoeffSet:
    """
    Broadened coefficients of a discrete bath.

    δ and PV(1/x) are replaced by the real and imaginary parts of
    1/(x − iσ): δ_σ(x) = σ/π/(x² + σ²) and x/(x² + σ²).
    """
    omegas = np.asarray(list(omegas), dtype=np.int64)
    x = eps * omegas + shift

    v2 = bath.couplings ** 2
    occ = fermi(bath.beta, bath.energies)
    u = bath.energies[:, None] - x[None, :]
    denom = u ** 2 + bath.sigma ** 2
    delta = (bath.sigma / math.pi) / denom
    pv = u / denom

    weight_f = (v2 * occ)[:, None]
    weight_g = (v2 * (1.0 - occ))[:, None]
    return CoeffSet(
        omegas=omegas,
        a_F=2.0 * math.pi * np.sum(weight_f * delta, axis=0),
        b_F=np.sum(weight_f * pv, axis=0),
        a_G=2.0 * math.pi * np.sum(weight_g * delta, axis=0),
        b_G=np.sum(weight_g * pv, axis=0),
        eps=eps,
        shift=shift,
        source=f"discrete(N={bath.n_levels}, sigma={bath.sigma:.6g})",
    )


def _principal_value(occupation, x: float, band: float) -> float:
    """PV ∫_{−D}^{D} occupation(E)/(E − x) dE by QUADPACK's Cauchy-weight rule."""
    if abs(x) == band:
        raise BathError(f"principal value is log-divergent at the band edge x={x}")

    if abs(x) > band:
        value, _ = quad(lambda e: occupation(e) / (e - x), -band, band,
                        epsabs=PV_EPSABS, epsrel=PV_EPSREL, limit=PV_LIMIT, points=[0.0])
        return value

    # singular panel symmetric about x, regular panels on both sides
    half = min(band - abs(x), 1.0)
    total, _ = quad(occupation, x - half, x + half, weight="cauchy", wvar=x,
                    epsabs=PV_EPSABS, epsrel=PV_EPSREL, limit=PV_LIMIT)
    for lo, hi in ((-band, x - half), (x + half, band)):
        if hi - lo <= 0:
            continue
        points = [0.0] if lo < 0.0 < hi else None
        value, _ = quad(lambda e: occupation(e) / (e - x), lo, hi,
                        epsabs=PV_EPSABS, epsrel=PV_EPSREL, limit=PV_LIMIT, points=points)
        total += value
    return total


def coeffs_wideband(
    wb: WideBand,
    eps: float,
    omegas: Iterable[int],
    shift: float = 0.0,
    workers: Optional[int] = None,
) -> CoeffSet:
    """
    Wide-band coefficients.

    a_F = Γ·f(x), a_G = Γ·(1 − f(x)) inside the band and 0 outside (flagged).
    b_F, b_G = Γ/(2π)·PV∫_{−D}^{D} f(E)/(E − x) dE and the 1 − f analogue by
    quadrature; they diverge for D = ∞ and are then returned as zero.
    """
    omegas = np.asarray(list(omegas), dtype=np.int64)
    x = eps * omegas + shift
    occ = fermi(wb.beta, x)
    inside = np.abs(x) <= wb.band

    a_f = np.where(inside, wb.gamma * occ, 0.0)
    a_g = np.where(inside, wb.gamma * (1.0 - occ), 0.0)
    outside = tuple(int(w) for w in omegas[~inside])
    if outside:
        logger.warning(f"omega values {outside} lie outside the band |x| <= {wb.band}; a-coefficients set to 0")

    if math.isinf(wb.band):
        logger.info("Infinite band: principal-value coefficients diverge, b_F = b_G = 0")
        b_f = np.zeros_like(x)
        b_g = np.zeros_like(x)
        regularized = True
    else:
        def occupied(e: float) -> float:
            return float(expit(-wb.beta * e))

        def empty(e: float) -> float:
            return float(expit(wb.beta * e))

        def pair(xv: float) -> tuple[float, float]:
            return _principal_value(occupied, xv, wb.band), _principal_value(empty, xv, wb.band)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(pair, x.tolist()))
        prefactor = wb.gamma / (2.0 * math.pi)
        b_f = prefactor * np.array([r[0] for r in results])
        b_g = prefactor * np.array([r[1] for r in results])
        regularized = False

    return CoeffSet(
        omegas=omegas,
        a_F=a_f,
        b_F=b_f,
        a_G=a_g,
        b_G=b_g,
        eps=eps,
        shift=shift,
        outside_band=outside,
        b_regularized=regularized,
        source=f"wideband(Gamma={wb.gamma:.6g}, D={wb.band:.6g})",
    )


def detailed_balance_ratio(beta: float, x: np.ndarray | float) -> np.ndarray | float:
    """a_F/a_G = f/(1 − f) = e^{−βx}."""
    return np.exp(-beta * np.asarray(x, dtype=float))


def convergence_to_wideband(
    bath: DiscreteBath,
    wb: WideBand,
    eps: float,
    omegas: Iterable[int],
    max_energy: Optional[float] = None,
    min_gap: float = 0.0,
) -> float:
    """
    sup_ω |a_F^discrete(ω) − Γ·f(εω)| / Γ.

    `max_energy` limits the test to |εω| ≤ max_energy (stay away from the band
    edges); `min_gap` skips |εω| < min_gap, where a sharp Fermi step cannot be
    resolved at finite broadening.
    """
    omegas = np.asarray(list(omegas), dtype=np.int64)
    x = eps * omegas
    keep = np.abs(x) >= min_gap
    if max_energy is not None:
        keep &= np.abs(x) <= max_energy
    omegas = omegas[keep]
    if omegas.size == 0:
        raise BathError("no omega values left after the energy window was applied")

    discrete = coeffs_discrete(bath, eps, omegas)
    reference = wb.gamma * fermi(wb.beta, eps * omegas)
    error = float(np.max(np.abs(discrete.a_F - reference)) / wb.gamma)
    logger.info(f"Wide-band convergence: N={bath.n_levels}, max relative error {error:.3e}")
    return error
