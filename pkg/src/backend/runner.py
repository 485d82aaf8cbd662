"""
Run dispatch: turns a RunConfig into artifacts plus a manifest.

Each generator kind has a handler that updates the RunState and writes its
files. Any exception inside a handler is recorded on the state, the manifest
is still written (with a FAILED marker) and the caller gets a failed status.
"""

import logging
import math
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from src.backend.basis import BlockDensity, LadderBasis, build_basis
from src.backend.bath import (
    CoeffSet,
    DiscreteBath,
    WideBand,
    coeffs_discrete,
    coeffs_wideband,
    uniform_bath,
)
from src.backend.dynamics import (
    IntegratorConfig,
    IntegratorMethod,
    propagate,
    propagate_rates,
    save_snapshots,
    trajectory_to_csv,
)
from src.backend.errors import ConfigError, GeneratorError
from src.backend.generators import (
    MATRICIZE_MAX_N,
    build_lindblad,
    build_rate_matrix,
    build_redfield,
    corrected_hamiltonian,
    escape_rates,
    export_superoperator,
    matricize,
    stationary_populations,
)
from src.backend.output import (
    save_manifest,
    write_coefficients_csv,
    write_csv,
    write_matrix_csv,
)
from src.backend.semiclassical import (
    Limiter,
    PhaseField,
    PhaseGrid,
    PhaseTrajectory,
    RateVariant,
    SolverConfig,
    blockade_table,
    cme_rates,
    compare_rate_variants,
    phase_field_to_csv,
    phase_hamiltonians,
    rate_field_to_csv,
    solve_cme,
    solve_lcme,
)
from src.backend.state import RunState, RunStatus
from src.config.run_config import RunConfig, config_hash, emit_config, load_config_dict

logger = logging.getLogger(__name__)

DIAGONAL_TOLERANCE = 1e-10


def build_bath(config: RunConfig) -> WideBand | DiscreteBath:
    section = config.bath
    beta = config.model.beta
    if section.kind == "wideband":
        return WideBand(gamma=section.gamma, beta=beta, band=section.band)
    if section.kind == "uniform":
        return uniform_bath(section.n_levels, section.e_min, section.e_max, section.gamma, beta, section.sigma)
    if section.levels is not None:
        table = np.array(section.levels, dtype=float)
    else:
        table = np.loadtxt(section.levels_file, delimiter=",", skiprows=1, ndmin=2)
    if table.ndim != 2 or table.shape[1] != 2:
        raise ConfigError(f"expected two columns (E, V), got shape {table.shape}", path="bath.levels")
    return DiscreteBath(energies=table[:, 0], couplings=table[:, 1], beta=beta, sigma=section.sigma)


def tabulate(bath: WideBand | DiscreteBath, basis: LadderBasis, workers: Optional[int] = None) -> CoeffSet:
    params = basis.params
    if isinstance(bath, WideBand):
        return coeffs_wideband(bath, params.epsilon, basis.omegas, params.ebar0, workers=workers)
    return coeffs_discrete(bath, params.epsilon, basis.omegas, params.ebar0)


def initial_state(config: RunConfig, basis: LadderBasis) -> BlockDensity:
    init = config.initial
    if init.kind == "eigenstate":
        return BlockDensity.eigenstate(basis.n_max, init.k, init.level)
    if init.kind == "diagonal":
        return BlockDensity.diagonal(np.array(init.lambdas), np.array(init.thetas))
    return BlockDensity.thermal(basis)


def phase_grid(config: RunConfig) -> PhaseGrid:
    g = config.grid
    if g is None:
        raise ConfigError("section required for phase-space runs", path="grid")
    return PhaseGrid(g.x_min, g.x_max, g.p_min, g.p_max, g.nx, g.np)


def _population_rows(times: np.ndarray, lambdas: np.ndarray, thetas: np.ndarray):
    for t, lam, th in zip(times, lambdas, thetas):
        yield [t] + lam.tolist() + th.tolist()


class Runner:
    """
    Executes one configured run.

    Each handler corresponds to a generator kind in the config schema and
    fills `state.summary` and `state.artifacts`.
    """

    def __init__(self, config: RunConfig, out_dir: str | Path, workers: Optional[int] = None,
                 run_id: Optional[str] = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.workers = workers
        self.state = RunState(run_id=run_id or str(uuid.uuid4())[:8], kind=config.generator)

    def path(self, suffix: str) -> Path:
        return self.out_dir / f"{self.config.output.prefix}_{suffix}"

    def run(self) -> RunState:
        handler_map: dict[str, Callable[[], None]] = {
            "redfield": self._run_quantum,
            "lindblad": self._run_quantum,
            "rates": self._run_rates,
            "cme": self._run_cme,
            "lcme": self._run_lcme,
            "coefficients": self._run_coefficients,
        }
        state = self.state
        state.start()
        handler = handler_map.get(self.config.generator)
        try:
            if handler is None:
                raise ConfigError(f"unknown generator {self.config.generator!r}", path="generator")
            handler()
            state.mark_completed()
            logger.info(f"Run {state.run_id} ({state.kind}) completed")
        except Exception as e:
            logger.error(f"Run {state.run_id} ({state.kind}) failed: {e}")
            state.mark_failed(e)
        finally:
            manifest = save_manifest(
                state,
                self.out_dir,
                config=emit_config(self.config),
                config_hash=config_hash(self.config),
                prefix=self.config.output.prefix,
            )
            state.add_artifact(manifest, "manifest")
        return state

    def _basis_and_coeffs(self) -> tuple[LadderBasis, CoeffSet]:
        basis = build_basis(self.config.model, self.config.n_max)
        coeffs = tabulate(build_bath(self.config), basis, self.workers)
        self.state.add_artifact(write_coefficients_csv(self.path("coefficients.csv"), coeffs), "coefficients")
        if coeffs.outside_band:
            self.state.add_findings([f"omega values outside the band: {list(coeffs.outside_band)}"], "bath")
        self.state.summary["b_regularized"] = coeffs.b_regularized
        return basis, coeffs

    def _run_coefficients(self) -> None:
        basis, coeffs = self._basis_and_coeffs()
        kappa0, kappa1 = escape_rates(basis, coeffs)
        shift = corrected_hamiltonian(basis, coeffs)
        rows = (
            [k, kappa0[k], kappa1[k], shift.diag0[k], shift.diag1[k]]
            for k in range(basis.n_max)
        )
        path = write_csv(self.path("levels.csv"), ["k", "kappa0", "kappa1", "h0", "h1"], rows)
        self.state.add_artifact(path, "levels", "escape weights and corrected-Hamiltonian diagonals")
        self.state.summary["completeness_defect_max"] = float(np.max(np.abs(basis.completeness_defect())))

    def _run_quantum(self) -> None:
        config = self.config
        basis, coeffs = self._basis_and_coeffs()
        builder = build_redfield if config.generator == "redfield" else build_lindblad
        gen = builder(basis, coeffs)

        if config.output.superoperator:
            if basis.n_max > MATRICIZE_MAX_N:
                raise GeneratorError(f"superoperator export needs n_max <= {MATRICIZE_MAX_N}")
            path = export_superoperator(matricize(gen), self.path("superoperator.bin"))
            self.state.add_artifact(path, "superoperator")

        integ = config.integrator
        cfg = IntegratorConfig(
            t_end=integ.t_end,
            dt=integ.dt,
            method=IntegratorMethod(integ.method),
            tolerance=integ.tolerance,
            stride=integ.stride,
            keep_states=config.output.snapshots,
            adaptive_scheme=integ.scheme,
        )
        traj = propagate(gen, initial_state(config, basis), cfg)
        self.state.add_artifact(trajectory_to_csv(traj, self.path("trajectory.csv")), "trajectory")
        if config.output.snapshots:
            for snapshot in save_snapshots(traj, self.path("snapshots")):
                self.state.add_artifact(snapshot, "snapshot")

        offdiag = float(np.max(traj.series("offdiag")))
        if offdiag > DIAGONAL_TOLERANCE:
            traj.findings.append(f"within-ladder coherence generated: max |off-diagonal| {offdiag:.3e}")
        self.state.add_findings(traj.findings, gen.kind.value)
        final = traj.final
        self.state.summary.update({
            "trace0": final.trace0,
            "trace1": final.trace1,
            "max_trace_drift": traj.max_trace_drift,
            "max_hermiticity_residual": traj.max_hermiticity,
            "max_coherence": float(np.max(traj.series("coherence"))),
            "max_offdiag": offdiag,
            "min_eigenvalue": float(np.min(traj.series("min_eigenvalue"))),
            "records": len(traj.times),
        })

    def _run_rates(self) -> None:
        config = self.config
        basis, coeffs = self._basis_and_coeffs()
        rates = build_rate_matrix(basis, coeffs)
        self.state.add_artifact(write_matrix_csv(self.path("k01.csv"), rates.k01), "rates", "|i,0> -> |f,1>")
        self.state.add_artifact(write_matrix_csv(self.path("k10.csv"), rates.k10), "rates", "|i,1> -> |f,0>")

        lambdas, thetas = initial_state(config, basis).populations()
        integ = config.integrator
        cfg = IntegratorConfig(t_end=integ.t_end, dt=integ.dt, stride=integ.stride)
        result = propagate_rates(rates, lambdas, thetas, cfg)
        n = basis.n_max
        header = ["time"] + [f"lambda_{k}" for k in range(n)] + [f"theta_{k}" for k in range(n)]
        path = write_csv(self.path("populations.csv"), header,
                         _population_rows(result.times, result.lambdas, result.thetas))
        self.state.add_artifact(path, "populations")

        self.state.summary.update({
            "escape0_ground": float(rates.escape0[0]),
            "trace0": float(result.lambdas[-1].sum()),
            "trace1": float(result.thetas[-1].sum()),
        })
        try:
            _, th_eq = stationary_populations(rates)
            self.state.summary["stationary_trace1"] = float(th_eq.sum())
        except GeneratorError as e:
            self.state.add_findings([str(e)], "rates")

    def _phase_setup(self) -> tuple[LadderBasis, PhaseGrid, PhaseField, SolverConfig]:
        config = self.config
        basis = build_basis(config.model, config.n_max)
        grid = phase_grid(config)
        init = PhaseField.from_density(basis, initial_state(config, basis), grid)
        sc = config.semiclassical
        solver = SolverConfig(
            t_end=sc.t_end,
            dt=sc.dt,
            cfl=sc.cfl,
            limiter=Limiter(sc.limiter),
            stride=sc.stride,
        )
        return basis, grid, init, solver

    def _finish_phase(self, traj: PhaseTrajectory, source: str) -> None:
        rows = ([t, m0, m1, m0 + m1] for t, m0, m1 in zip(traj.times, traj.mass0, traj.mass1))
        self.state.add_artifact(write_csv(self.path("masses.csv"), ["time", "mass0", "mass1", "total"], rows),
                                "masses")
        if self.config.output.fields and traj.final is not None:
            self.state.add_artifact(phase_field_to_csv(traj.final, self.path("final_field.csv")), "field")
        self.state.add_findings(traj.findings, source)
        self.state.summary.update({
            "mass0": traj.mass0[-1],
            "mass1": traj.mass1[-1],
            "max_mass_drift": traj.max_mass_drift,
            "dt": traj.dt,
            "n_steps": traj.n_steps,
            "records": len(traj.times),
        })

    def _run_cme(self) -> None:
        config = self.config
        basis, grid, init, solver = self._phase_setup()
        bath = build_bath(config)
        variant = RateVariant(config.semiclassical.rate_variant)
        rates = cme_rates(bath, config.model, grid, variant)
        if variant is RateVariant.FULL:
            heuristic = cme_rates(bath, config.model, grid, RateVariant.WIDEBAND_HEURISTIC)
            deviation = compare_rate_variants(rates, heuristic)
            self.state.summary["full_vs_heuristic_max"] = float(np.max(deviation))
        if config.output.fields:
            self.state.add_artifact(rate_field_to_csv(rates, grid, self.path("rates_field.csv")), "field")
        h0, h1 = phase_hamiltonians(config.model, grid)
        traj = solve_cme(rates, h0, h1, init, grid, solver)
        self._finish_phase(traj, "cme")

    def _run_lcme(self) -> None:
        config = self.config
        basis, grid, init, solver = self._phase_setup()
        coeffs = tabulate(build_bath(config), basis, self.workers)
        self.state.add_artifact(write_coefficients_csv(self.path("coefficients.csv"), coeffs), "coefficients")
        traj = solve_lcme(basis, coeffs, init, grid, solver, include_corrections=config.semiclassical.corrections)
        self._finish_phase(traj, "lcme")


def run(config: RunConfig, out_dir: str | Path, workers: Optional[int] = None) -> RunState:
    return Runner(config, out_dir, workers).run()


def _run_sweep_entry(payload: tuple[dict[str, Any], str, str]) -> dict[str, Any]:
    data, out_dir, run_id = payload
    state = Runner(load_config_dict(data), out_dir, workers=1, run_id=run_id).run()
    return {"run_id": run_id, "status": state.status.value, "out_dir": out_dir,
            "summary": state.summary, "error": state.error}


@dataclass
class SweepResult:
    state: RunState
    entries: list[dict[str, Any]] = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return self.state.succeeded and all(e["status"] == RunStatus.COMPLETED.value for e in self.entries)


def run_sweep(config: RunConfig, out_dir: str | Path, workers: Optional[int] = None) -> SweepResult:
    """
    One run per value of the swept model parameter, each in its own
    directory, executed in a process pool. A sweep over g with a wide-band
    bath also writes the Franck-Condon blockade table.
    """
    if config.sweep is None:
        raise ConfigError("section required by the sweep command", path="sweep")
    out_dir = Path(out_dir)
    sweep = config.sweep
    state = RunState(run_id=str(uuid.uuid4())[:8], kind=f"sweep:{sweep.parameter}")
    state.start()
    result = SweepResult(state=state)

    try:
        payloads = []
        for i, value in enumerate(sweep.values):
            entry = config.with_parameter(sweep.parameter, value)
            entry_dir = out_dir / f"{config.output.prefix}_{sweep.parameter}_{i:03d}"
            payloads.append((emit_config(entry), str(entry_dir), f"{state.run_id}-{i:03d}"))

        with ProcessPoolExecutor(max_workers=workers) as pool:
            result.entries = list(pool.map(_run_sweep_entry, payloads))
        for value, entry in zip(sweep.values, result.entries):
            entry["value"] = value
            if entry["status"] != RunStatus.COMPLETED.value:
                state.add_findings([f"{sweep.parameter}={value}: {entry['error']}"], "sweep")

        if sweep.parameter == "g" and config.bath.kind == "wideband":
            bath = build_bath(config)
            rows = blockade_table(sweep.values, config.model, bath, config.n_max)
            path = write_csv(
                out_dir / f"{config.output.prefix}_blockade.csv",
                ["g", "huang_rhys", "rate_00", "escape_0", "log_rate_00"],
                ([r.g, r.huang_rhys, r.rate_00, r.escape_0, math.log(r.rate_00) if r.rate_00 > 0 else -math.inf]
                 for r in rows),
            )
            state.add_artifact(path, "blockade")
        state.summary["entries"] = [
            {"value": e["value"], "status": e["status"], "out_dir": e["out_dir"]} for e in result.entries
        ]
        state.mark_completed()
    except Exception as e:
        logger.error(f"Sweep failed: {e}")
        state.mark_failed(e)
    finally:
        save_manifest(state, out_dir, config=emit_config(config), config_hash=config_hash(config),
                      prefix=f"{config.output.prefix}_sweep")
    return result
