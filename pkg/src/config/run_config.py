"""
Run configuration: schema validation, default resolution and JSON round-trip.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from src.backend.basis import ModelParams
from src.backend.bath import UNIFORM_BROADENING, uniform_spacing
from src.backend.dynamics import default_dt
from src.backend.errors import AhsimError, ConfigError
from src.config.schema import PHASE_SPACE_GENERATORS, RUN_SCHEMA

logger = logging.getLogger(__name__)

_TYPES: dict[str, tuple[type, ...]] = {
    "number": (int, float),
    "integer": (int,),
    "string": (str,),
    "boolean": (bool,),
    "array": (list, tuple),
    "object": (dict,),
}


def _join(path: str, key: Any) -> str:
    return f"{path}.{key}" if path else str(key)


def validate(value: Any, schema: dict[str, Any], path: str = "") -> Any:
    """Check `value` against a schema node and return it with defaults filled in."""
    if value is None:
        if schema.get("nullable"):
            return None
        raise ConfigError("must not be null", path=path or None)

    expected = schema["type"]
    if isinstance(value, bool) and expected in ("number", "integer"):
        raise ConfigError(f"expected {expected}, got boolean", path=path or None)
    if not isinstance(value, _TYPES[expected]):
        raise ConfigError(f"expected {expected}, got {type(value).__name__}", path=path or None)

    if "enum" in schema and value not in schema["enum"]:
        raise ConfigError(f"{value!r} is not one of {schema['enum']}", path=path or None)
    if expected in ("number", "integer"):
        if not math.isfinite(value):
            raise ConfigError("must be finite", path=path or None)
        if "minimum" in schema and value < schema["minimum"]:
            raise ConfigError(f"must be >= {schema['minimum']}, got {value}", path=path or None)
        if "exclusiveMinimum" in schema and value <= schema["exclusiveMinimum"]:
            raise ConfigError(f"must be > {schema['exclusiveMinimum']}, got {value}", path=path or None)
        if "maximum" in schema and value > schema["maximum"]:
            raise ConfigError(f"must be <= {schema['maximum']}, got {value}", path=path or None)
        return float(value) if expected == "number" else value

    if expected == "array":
        if "length" in schema and len(value) != schema["length"]:
            raise ConfigError(f"expected {schema['length']} entries, got {len(value)}", path=path or None)
        if "minItems" in schema and len(value) < schema["minItems"]:
            raise ConfigError(f"expected at least {schema['minItems']} entries", path=path or None)
        return [validate(item, schema["items"], _join(path, i)) for i, item in enumerate(value)]

    if expected == "object":
        properties = schema["properties"]
        unknown = sorted(set(value) - set(properties))
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", path=path or None)
        resolved = {}
        for key, node in properties.items():
            child = _join(path, key)
            if key in value:
                resolved[key] = validate(value[key], node, child)
            elif key in schema.get("required", []):
                raise ConfigError("missing required key", path=child)
            elif node.get("default", None) is None:
                resolved[key] = None
            else:
                resolved[key] = validate(node["default"], node, child)
        return resolved

    return value


@dataclass(frozen=True)
class BathConfig:
    kind: str = "wideband"
    gamma: float = 1.0
    band: float = math.inf
    sigma: Optional[float] = None
    levels: Optional[tuple[tuple[float, float], ...]] = None
    levels_file: Optional[str] = None
    n_levels: int = 4000
    e_min: float = -5.0
    e_max: float = 5.0


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "eigenstate"
    k: int = 0
    level: int = 0
    lambdas: Optional[tuple[float, ...]] = None
    thetas: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class IntegratorSection:
    method: str
    dt: float
    tolerance: float
    t_end: float
    stride: int
    scheme: str
    # dt came from default_dt rather than the config file
    dt_derived: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class GridConfig:
    x_min: float
    x_max: float
    p_min: float
    p_max: float
    nx: int = 128
    np: int = 128


@dataclass(frozen=True)
class SemiclassicalSection:
    rate_variant: str = "wideband-heuristic"
    limiter: str = "van_leer"
    cfl: float = 0.5
    dt: Optional[float] = None
    t_end: float = 10.0
    stride: int = 10
    corrections: bool = True


@dataclass(frozen=True)
class OutputConfig:
    prefix: str = "run"
    snapshots: bool = False
    superoperator: bool = False
    fields: bool = True


@dataclass(frozen=True)
class SweepConfig:
    parameter: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class RunConfig:
    name: str
    generator: str
    model: ModelParams
    n_max: int
    bath: BathConfig
    initial: InitialConfig
    integrator: IntegratorSection
    grid: Optional[GridConfig]
    semiclassical: SemiclassicalSection
    output: OutputConfig
    sweep: Optional[SweepConfig] = None

    def with_parameter(self, parameter: str, value: float) -> "RunConfig":
        """Copy with one model parameter replaced; a derived integrator step is re-derived."""
        model = replace(self.model, **{parameter: value})
        integrator = self.integrator
        if integrator.dt_derived:
            integrator = replace(integrator, dt=default_dt(model))
        return replace(self, model=model, integrator=integrator, sweep=None)


def _bath_sigma(bath_raw: dict[str, Any]) -> Optional[float]:
    """Explicit broadening, or the uniform-bath default so the manifest shows the value used."""
    sigma = bath_raw["sigma"]
    if sigma is None and bath_raw["kind"] == "uniform" and bath_raw["e_max"] > bath_raw["e_min"]:
        sigma = UNIFORM_BROADENING * uniform_spacing(bath_raw["n_levels"], bath_raw["e_min"], bath_raw["e_max"])
    return sigma


def _build(data: dict[str, Any], base_dir: Path) -> RunConfig:
    resolved = validate(data, RUN_SCHEMA)

    try:
        model = ModelParams(**resolved["model"])
    except AhsimError as exc:
        raise ConfigError(str(exc), path="model") from exc

    bath_raw = resolved["bath"]
    levels_file = bath_raw["levels_file"]
    if levels_file is not None:
        target = Path(levels_file)
        if not target.is_absolute():
            target = (base_dir / target).resolve()
        if not target.is_file():
            raise ConfigError(f"file not found: {target}", path="bath.levels_file")
        levels_file = str(target)
    bath = BathConfig(
        kind=bath_raw["kind"],
        gamma=bath_raw["gamma"],
        band=math.inf if bath_raw["band"] is None else bath_raw["band"],
        sigma=_bath_sigma(bath_raw),
        levels=None if bath_raw["levels"] is None else tuple((float(e), float(v)) for e, v in bath_raw["levels"]),
        levels_file=levels_file,
        n_levels=bath_raw["n_levels"],
        e_min=bath_raw["e_min"],
        e_max=bath_raw["e_max"],
    )

    init_raw = resolved["initial"]
    initial = InitialConfig(
        kind=init_raw["kind"],
        k=init_raw["k"],
        level=init_raw["level"],
        lambdas=None if init_raw["lambdas"] is None else tuple(init_raw["lambdas"]),
        thetas=None if init_raw["thetas"] is None else tuple(init_raw["thetas"]),
    )

    integ = resolved["integrator"]
    integrator = IntegratorSection(
        method=integ["method"],
        dt=default_dt(model) if integ["dt"] is None else integ["dt"],
        dt_derived=integ["dt"] is None,
        tolerance=integ["tolerance"],
        t_end=integ["t_end"],
        stride=integ["stride"],
        scheme=integ["scheme"],
    )

    grid = None if resolved["grid"] is None else GridConfig(**resolved["grid"])
    sweep = None
    if resolved["sweep"] is not None:
        sweep = SweepConfig(parameter=resolved["sweep"]["parameter"], values=tuple(resolved["sweep"]["values"]))

    config = RunConfig(
        name=resolved["name"],
        generator=resolved["generator"],
        model=model,
        n_max=resolved["basis"]["n_max"],
        bath=bath,
        initial=initial,
        integrator=integrator,
        grid=grid,
        semiclassical=SemiclassicalSection(**resolved["semiclassical"]),
        output=OutputConfig(**resolved["output"]),
        sweep=sweep,
    )
    _check_consistency(config)
    return config


def _check_consistency(config: RunConfig) -> None:
    if config.generator in PHASE_SPACE_GENERATORS and config.grid is None:
        raise ConfigError(f"section required by generator '{config.generator}'", path="grid")
    if config.grid is not None:
        g = config.grid
        if not (g.x_min < g.x_max and g.p_min < g.p_max):
            raise ConfigError("bounds must satisfy x_min < x_max and p_min < p_max", path="grid")

    bath = config.bath
    if bath.kind == "discrete":
        if (bath.levels is None) == (bath.levels_file is None):
            raise ConfigError("give exactly one of 'levels' or 'levels_file'", path="bath.levels")
        if bath.sigma is None:
            raise ConfigError("discrete bath needs a broadening", path="bath.sigma")
    if bath.kind == "uniform" and not bath.e_max > bath.e_min:
        raise ConfigError("e_max must exceed e_min", path="bath.e_max")

    if config.semiclassical.rate_variant == "full":
        if bath.kind != "wideband" or not math.isinf(bath.band):
            raise ConfigError("full rates need an infinite wide-band bath", path="semiclassical.rate_variant")
        if config.generator != "cme":
            raise ConfigError("full rates apply to the cme generator only", path="semiclassical.rate_variant")

    if config.sweep is not None:
        for index, value in enumerate(config.sweep.values):
            try:
                replace(config.model, **{config.sweep.parameter: value})
            except AhsimError as exc:
                raise ConfigError(str(exc), path=f"sweep.values.{index}") from exc

    init = config.initial
    if init.kind == "eigenstate" and init.k >= config.n_max:
        raise ConfigError(f"k={init.k} outside basis of size {config.n_max}", path="initial.k")
    if init.kind == "diagonal":
        for name in ("lambdas", "thetas"):
            values = getattr(init, name)
            if values is None or len(values) != config.n_max:
                raise ConfigError(f"needs {config.n_max} entries", path=f"initial.{name}")
            if min(values) < 0:
                raise ConfigError("populations must be non-negative", path=f"initial.{name}")
        total = sum(init.lambdas) + sum(init.thetas)
        if abs(total - 1.0) > 1e-10:
            raise ConfigError(f"populations sum to {total!r}, expected 1", path="initial")


def load_config_dict(data: dict[str, Any], base_dir: str | Path = ".") -> RunConfig:
    return _build(data, Path(base_dir))


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON run configuration."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object")
    config = _build(data, path.parent)
    logger.info(f"Loaded config '{config.name}' ({config.generator}) from {path}")
    return config


def emit_config(config: RunConfig) -> dict[str, Any]:
    """Fully resolved JSON-ready form; parse of this dict gives back an equal RunConfig."""
    m = config.model
    b = config.bath
    i = config.initial
    data: dict[str, Any] = {
        "name": config.name,
        "generator": config.generator,
        "model": {"epsilon": m.epsilon, "alpha": m.alpha, "g": m.g, "ebar0": m.ebar0, "beta": m.beta},
        "basis": {"n_max": config.n_max},
        "bath": {
            "kind": b.kind,
            "gamma": b.gamma,
            "band": None if math.isinf(b.band) else b.band,
            "sigma": b.sigma,
            "levels": None if b.levels is None else [list(level) for level in b.levels],
            "levels_file": b.levels_file,
            "n_levels": b.n_levels,
            "e_min": b.e_min,
            "e_max": b.e_max,
        },
        "initial": {
            "kind": i.kind,
            "k": i.k,
            "level": i.level,
            "lambdas": None if i.lambdas is None else list(i.lambdas),
            "thetas": None if i.thetas is None else list(i.thetas),
        },
        "integrator": vars_of(config.integrator, exclude=("dt_derived",)),
        "grid": None if config.grid is None else vars_of(config.grid),
        "semiclassical": vars_of(config.semiclassical),
        "output": vars_of(config.output),
        "sweep": None if config.sweep is None else {
            "parameter": config.sweep.parameter,
            "values": list(config.sweep.values),
        },
    }
    return data


def vars_of(section: Any, exclude: tuple[str, ...] = ()) -> dict[str, Any]:
    return {name: getattr(section, name) for name in section.__dataclass_fields__ if name not in exclude}


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(emit_config(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()
