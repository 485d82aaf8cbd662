"""
Time propagation of block density matrices and of the classical rate equations.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from src.backend.basis import BlockDensity, ModelParams
from src.backend.errors import ConfigError, PropagationError
from src.backend.generators import Generator, GeneratorKind, RateMatrix

logger = logging.getLogger(__name__)

TRACE_DRIFT_LIMIT = 1e-8
LINDBLAD_NEGATIVITY_LIMIT = -1e-8
REDFIELD_NEGATIVITY_LIMIT = -1e-6
POPULATION_FLOOR = -1e-10
PROBABILITY_DRIFT_LIMIT = 1e-10


class IntegratorMethod(Enum):
    RK4 = "rk4"
    ADAPTIVE = "adaptive"


def default_dt(params: ModelParams) -> float:
    """min(0.01, 0.05·ε/α²/1000)."""
    if params.alpha == 0:
        return 0.01
    return min(0.01, 0.05 * params.relaxation_time / 1000.0)


@dataclass(frozen=True)
class IntegratorConfig:
    """
    Stepping controls. For RK4 `dt` is the step; for the adaptive pair it is
    the base record interval and `tolerance` drives the step control.
    """
    t_end: float
    dt: float = 0.01
    method: IntegratorMethod = IntegratorMethod.RK4
    tolerance: float = 1e-10
    stride: int = 1
    keep_states: bool = True
    adaptive_scheme: str = "DOP853"

    def __post_init__(self) -> None:
        if not self.t_end > 0:
            raise ConfigError(f"must be > 0, got {self.t_end}", path="integrator.t_end")
        if not self.dt > 0:
            raise ConfigError(f"must be > 0, got {self.dt}", path="integrator.dt")
        if not self.tolerance > 0:
            raise ConfigError(f"must be > 0, got {self.tolerance}", path="integrator.tolerance")
        if self.stride < 1:
            raise ConfigError(f"must be >= 1, got {self.stride}", path="integrator.stride")
        if self.adaptive_scheme not in ("RK45", "DOP853"):
            raise ConfigError(f"unknown scheme {self.adaptive_scheme!r}", path="integrator.adaptive_scheme")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass(frozen=True)
class ObservableRecord:
    time: float
    trace: float
    trace0: float
    trace1: float
    lambdas: np.ndarray
    thetas: np.ndarray
    coherence: float  # ‖rho01‖_F
    offdiag: float  # largest |off-diagonal| inside rho0 and rho1
    min_eigenvalue: float
    hermiticity: float = 0.0  # ‖ρ − ρ†‖_F before re-symmetrization


def observables(rho: BlockDensity, time: float = 0.0, hermiticity: float = 0.0) -> ObservableRecord:
    lambdas, thetas = rho.populations()
    full = rho.to_matrix()
    eigenvalues = np.linalg.eigvalsh(0.5 * (full + full.conj().T))
    offdiag = 0.0
    for block in (rho.rho0, rho.rho1):
        off = block - np.diag(np.diag(block))
        offdiag = max(offdiag, float(np.max(np.abs(off))) if off.size else 0.0)
    return ObservableRecord(
        time=float(time),
        trace=float(lambdas.sum() + thetas.sum()),
        trace0=float(lambdas.sum()),
        trace1=float(thetas.sum()),
        lambdas=lambdas,
        thetas=thetas,
        coherence=float(np.linalg.norm(rho.rho01)),
        offdiag=offdiag,
        min_eigenvalue=float(eigenvalues[0]),
        hermiticity=float(hermiticity),
    )


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[BlockDensity] = field(default_factory=list)
    observables: list[ObservableRecord] = field(default_factory=list)
    kind: str = ""
    max_trace_drift: float = 0.0
    max_hermiticity: float = 0.0
    findings: list[str] = field(default_factory=list)

    def record(self, time: float, rho: BlockDensity, hermiticity: float, keep_state: bool) -> ObservableRecord:
        if self.times and time <= self.times[-1]:
            raise PropagationError("record times must increase", time=time, last_state=rho)
        obs = observables(rho, time, hermiticity)
        self.times.append(float(time))
        self.observables.append(obs)
        if keep_state:
            self.states.append(rho)
        self.max_trace_drift = max(self.max_trace_drift, abs(obs.trace - 1.0))
        self.max_hermiticity = max(self.max_hermiticity, obs.hermiticity)
        return obs

    @property
    def final(self) -> ObservableRecord:
        return self.observables[-1]

    def populations(self) -> tuple[np.ndarray, np.ndarray]:
        """(λ, θ) stacked over recorded times, shape (T, n_max) each."""
        return (
            np.array([o.lambdas for o in self.observables]),
            np.array([o.thetas for o in self.observables]),
        )

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(o, name) for o in self.observables])


def _rk4_step(gen: Generator, rho: np.ndarray, dt: float) -> np.ndarray:
    k1 = gen.apply_matrix(rho)
    k2 = gen.apply_matrix(rho + 0.5 * dt * k1)
    k3 = gen.apply_matrix(rho + 0.5 * dt * k2)
    k4 = gen.apply_matrix(rho + dt * k3)
    return rho + dt * (k1 + 2.0 * (k2 + k3) + k4) / 6.0


def _adaptive_segment(gen: Generator, rho: np.ndarray, t0: float, t1: float, cfg: IntegratorConfig) -> np.ndarray:
    shape = rho.shape

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        return gen.apply_matrix(y.reshape(shape)).reshape(-1)

    sol = solve_ivp(
        rhs,
        (t0, t1),
        rho.reshape(-1),
        method=cfg.adaptive_scheme,
        rtol=cfg.tolerance,
        atol=cfg.tolerance * 1e-2,
    )
    if not sol.success:
        raise PropagationError(f"adaptive integrator failed: {sol.message}", time=t0,
                               last_state=BlockDensity.from_matrix(rho))
    return sol.y[:, -1].reshape(shape)


def _check_initial(rho_init: BlockDensity) -> None:
    if not rho_init.is_hermitian(1e-10):
        raise PropagationError("initial state is not Hermitian", time=0.0, last_state=rho_init)
    if abs(rho_init.trace() - 1.0) > 1e-10:
        raise PropagationError(f"initial state has trace {rho_init.trace():.12g}", time=0.0, last_state=rho_init)


def _note_positivity(traj: Trajectory, kind: GeneratorKind, obs: ObservableRecord) -> None:
    limit = REDFIELD_NEGATIVITY_LIMIT if kind is GeneratorKind.REDFIELD else LINDBLAD_NEGATIVITY_LIMIT
    if obs.min_eigenvalue < limit and not any(f.startswith("positivity") for f in traj.findings):
        message = f"positivity violation: min eigenvalue {obs.min_eigenvalue:.3e} at t={obs.time:.6g}"
        traj.findings.append(message)
        logger.warning(f"{kind.value}: {message}")


def propagate(gen: Generator, rho_init: BlockDensity, cfg: IntegratorConfig) -> Trajectory:
    """
    Integrate dρ/dt = gen(ρ) from t = 0 to cfg.t_end.

    ρ is re-Hermitized after every step; the residual removed is recorded.
    """
    _check_initial(rho_init)
    traj = Trajectory(kind=gen.kind.value)
    traj.record(0.0, rho_init, 0.0, cfg.keep_states)

    rho = rho_init.to_matrix()
    n_steps = cfg.n_steps
    dt = cfg.t_end / n_steps

    for step in range(1, n_steps + 1):
        t_prev = (step - 1) * dt
        if cfg.method is IntegratorMethod.RK4:
            new = _rk4_step(gen, rho, dt)
        else:
            new = _adaptive_segment(gen, rho, t_prev, step * dt, cfg)

        if not np.all(np.isfinite(new)):
            raise PropagationError("non-finite state", time=t_prev, last_state=BlockDensity.from_matrix(rho))

        residual = float(np.linalg.norm(new - new.conj().T))
        rho = 0.5 * (new + new.conj().T)

        if step % cfg.stride == 0 or step == n_steps:
            obs = traj.record(step * dt, BlockDensity.from_matrix(rho), residual, cfg.keep_states)
            _note_positivity(traj, gen.kind, obs)
        else:
            traj.max_hermiticity = max(traj.max_hermiticity, residual)

    if traj.max_trace_drift > TRACE_DRIFT_LIMIT:
        message = f"trace drift {traj.max_trace_drift:.3e} exceeds {TRACE_DRIFT_LIMIT:.0e}"
        traj.findings.append(message)
        logger.warning(message)

    logger.info(
        f"Propagated {gen.kind.value} to t={cfg.t_end:g} in {n_steps} steps; "
        f"trace drift {traj.max_trace_drift:.2e}, Hermiticity residual {traj.max_hermiticity:.2e}"
    )
    return traj


@dataclass
class PopulationTrajectory:
    times: np.ndarray
    lambdas: np.ndarray  # (T, n_max)
    thetas: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        return self.lambdas.sum(axis=1) + self.thetas.sum(axis=1)


def propagate_rates(
    rates: RateMatrix,
    lambda0: np.ndarray,
    theta0: np.ndarray,
    cfg: IntegratorConfig,
) -> PopulationTrajectory:
    """
    Solve the linear rate equations dλ_f/dt = −λ_f·Σ_g k01[f][g] + Σ_i θ_i·k10[i][f] (and the θ analogue).

    The equations have constant coefficients, so each record interval is
    advanced with the exact propagator exp(Q·Δt).
    """
    lambda0 = np.asarray(lambda0, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    n = rates.n_max
    if lambda0.shape != (n,) or theta0.shape != (n,):
        raise PropagationError(f"population vectors must have length {n}")
    y = np.concatenate([lambda0, theta0])
    if np.any(y < 0) or abs(y.sum() - 1.0) > 1e-10:
        raise PropagationError("initial populations must be non-negative and sum to 1")

    interval = cfg.dt * cfg.stride
    n_records = max(1, int(round(cfg.t_end / interval)))
    interval = cfg.t_end / n_records
    step = expm(rates.generator_matrix() * interval)

    times = [0.0]
    history = [y]
    for i in range(1, n_records + 1):
        y = step @ y
        if np.min(y) < POPULATION_FLOOR:
            raise PropagationError(f"negative population {np.min(y):.3e}", time=i * interval, last_state=history[-1])
        if abs(y.sum() - 1.0) > PROBABILITY_DRIFT_LIMIT:
            raise PropagationError(f"probability drift {abs(y.sum() - 1.0):.3e}", time=i * interval,
                                   last_state=history[-1])
        times.append(i * interval)
        history.append(y)

    stacked = np.array(history)
    return PopulationTrajectory(times=np.array(times), lambdas=stacked[:, :n], thetas=stacked[:, n:])


def population_slopes(
    gen: Generator,
    rho_init: BlockDensity,
    h: float = 0.1,
    levels: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Initial slopes dλ/dt, dθ/dt at t = 0 from forward differences of short
    propagations, Richardson-extrapolated over step halvings.
    """
    if levels < 1 or not h > 0:
        raise ConfigError("need h > 0 and at least one level", path="population_slopes")
    start = np.concatenate(rho_init.populations())

    table: list[list[np.ndarray]] = []
    for j in range(levels):
        step = h / 2 ** j
        traj = propagate(gen, rho_init, IntegratorConfig(t_end=step, dt=step, keep_states=False))
        final = traj.final
        row = [(np.concatenate([final.lambdas, final.thetas]) - start) / step]
        for k in range(1, j + 1):
            row.append(row[k - 1] + (row[k - 1] - table[j - 1][k - 1]) / (2 ** k - 1))
        table.append(row)

    best = table[-1][-1]
    n = rho_init.n_max
    return best[:n], best[n:]


TRAJECTORY_COLUMNS = ("time", "trace", "trace0", "trace1", "coherence", "offdiag", "min_eigenvalue", "hermiticity")


def trajectory_to_csv(traj: Trajectory, path: str | Path) -> Path:
    """One row per record: the scalar observables, then lambda_k and theta_k columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = traj.observables[0].lambdas.size if traj.observables else 0
    header = list(TRAJECTORY_COLUMNS)
    header += [f"lambda_{k}" for k in range(n)] + [f"theta_{k}" for k in range(n)]
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for obs in traj.observables:
            values = [getattr(obs, name) for name in TRAJECTORY_COLUMNS]
            values += obs.lambdas.tolist() + obs.thetas.tolist()
            writer.writerow([repr(float(v)) for v in values])
    return path


def save_snapshots(traj: Trajectory, directory: str | Path) -> list[Path]:
    """Dump each stored state as a full 2·n_max complex matrix in .npy format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, state in enumerate(traj.states):
        target = directory / f"state_{i:05d}.npy"
        np.save(target, state.to_matrix())
        paths.append(target)
    logger.debug(f"Saved {len(paths)} snapshots to {directory}")
    return paths


def richardson_order(coarse: np.ndarray, medium: np.ndarray, fine: np.ndarray) -> float:
    """Observed convergence order log2(‖coarse − medium‖ / ‖medium − fine‖)."""
    upper = np.linalg.norm(coarse - medium)
    lower = np.linalg.norm(medium - fine)
    if lower == 0:
        return math.inf
    return float(math.log2(upper / lower))
