"""
Run configuration schema.

Configs are JSON objects. Each section below follows the same declarative
layout: "properties" with a "type", optional "enum", bounds, "default" and
"description"; "required" lists the keys without defaults. Unknown keys are
rejected. A default of None means "derived at parse time" and the derived
value is what gets echoed to the manifest.
"""

from typing import Any

GENERATORS = ["redfield", "lindblad", "rates", "cme", "lcme", "coefficients"]
QUANTUM_GENERATORS = {"redfield", "lindblad", "rates", "coefficients"}
PHASE_SPACE_GENERATORS = {"cme", "lcme"}

MODEL_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "description": "Semiclassical parameter"},
        "alpha": {"type": "number", "minimum": 0, "description": "System-bath coupling"},
        "g": {"type": "number", "default": 0.0, "description": "Electron-phonon coupling"},
        "ebar0": {"type": "number", "default": 0.0, "description": "Renormalized on-site energy"},
        "beta": {"type": "number", "exclusiveMinimum": 0, "default": 1.0, "description": "Inverse temperature"},
    },
    "required": ["epsilon", "alpha"],
}

BASIS_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "n_max": {"type": "integer", "minimum": 2, "default": 40, "description": "Levels per ladder"},
    },
    "required": [],
}

BATH_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "kind": {"type": "string", "enum": ["wideband", "discrete", "uniform"], "default": "wideband"},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "default": 1.0,
                  "description": "Level width Γ (wideband and uniform)"},
        "band": {"type": "number", "exclusiveMinimum": 0, "default": None, "nullable": True,
                 "description": "Band half-width D; null is an infinite band"},
        "sigma": {"type": "number", "exclusiveMinimum": 0, "default": None, "nullable": True,
                  "description": "Broadening (discrete, uniform); uniform defaults to two level spacings"},
        "levels": {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "length": 2},
                   "default": None, "nullable": True, "description": "[[E_k, V_k], ...] for a discrete bath"},
        "levels_file": {"type": "string", "default": None, "nullable": True,
                        "description": "CSV file with columns E, V (discrete bath), relative to the config"},
        "n_levels": {"type": "integer", "minimum": 1, "default": 4000},
        "e_min": {"type": "number", "default": -5.0},
        "e_max": {"type": "number", "default": 5.0},
    },
    "required": [],
}

INITIAL_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "kind": {"type": "string", "enum": ["eigenstate", "diagonal", "thermal"], "default": "eigenstate"},
        "k": {"type": "integer", "minimum": 0, "default": 0},
        "level": {"type": "integer", "enum": [0, 1], "default": 0},
        "lambdas": {"type": "array", "items": {"type": "number"}, "default": None, "nullable": True},
        "thetas": {"type": "array", "items": {"type": "number"}, "default": None, "nullable": True},
    },
    "required": [],
}

INTEGRATOR_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "method": {"type": "string", "enum": ["rk4", "adaptive"], "default": "rk4"},
        "dt": {"type": "number", "exclusiveMinimum": 0, "default": None, "nullable": True,
               "description": "Step (rk4) or record interval (adaptive); null is min(0.01, 0.05·ε/α²/1000)"},
        "tolerance": {"type": "number", "exclusiveMinimum": 0, "default": 1e-10},
        "t_end": {"type": "number", "exclusiveMinimum": 0, "default": 10.0},
        "stride": {"type": "integer", "minimum": 1, "default": 10},
        "scheme": {"type": "string", "enum": ["RK45", "DOP853"], "default": "DOP853"},
    },
    "required": [],
}

GRID_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "x_min": {"type": "number"},
        "x_max": {"type": "number"},
        "p_min": {"type": "number"},
        "p_max": {"type": "number"},
        "nx": {"type": "integer", "minimum": 16, "default": 128},
        "np": {"type": "integer", "minimum": 16, "default": 128},
    },
    "required": ["x_min", "x_max", "p_min", "p_max"],
}

SEMICLASSICAL_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "rate_variant": {"type": "string", "enum": ["wideband-heuristic", "full"], "default": "wideband-heuristic"},
        "limiter": {"type": "string", "enum": ["van_leer", "minmod"], "default": "van_leer"},
        "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.5},
        "dt": {"type": "number", "exclusiveMinimum": 0, "default": None, "nullable": True,
               "description": "Phase-space step; null picks the largest CFL-stable step"},
        "t_end": {"type": "number", "exclusiveMinimum": 0, "default": 10.0},
        "stride": {"type": "integer", "minimum": 1, "default": 10},
        "corrections": {"type": "boolean", "default": True, "description": "LCME corrected-Hamiltonian fields"},
    },
    "required": [],
}

OUTPUT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "prefix": {"type": "string", "default": "run"},
        "snapshots": {"type": "boolean", "default": False, "description": "Dump recorded states as .npy"},
        "superoperator": {"type": "boolean", "default": False, "description": "Export the matricized generator"},
        "fields": {"type": "boolean", "default": True, "description": "Write final phase-space and rate fields"},
    },
    "required": [],
}

SWEEP_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "parameter": {"type": "string", "enum": ["epsilon", "alpha", "g", "ebar0", "beta"]},
        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
    "required": ["parameter", "values"],
}

RUN_SCHEMA: dict[str, Any] = {
    "type": "object",
    "properties": {
        "name": {"type": "string", "default": "ahsim"},
        "generator": {"type": "string", "enum": GENERATORS},
        "model": MODEL_SCHEMA,
        "basis": {**BASIS_SCHEMA, "default": {}},
        "bath": {**BATH_SCHEMA, "default": {}},
        "initial": {**INITIAL_SCHEMA, "default": {}},
        "integrator": {**INTEGRATOR_SCHEMA, "default": {}},
        "grid": {**GRID_SCHEMA, "default": None, "nullable": True},
        "semiclassical": {**SEMICLASSICAL_SCHEMA, "default": {}},
        "output": {**OUTPUT_SCHEMA, "default": {}},
        "sweep": {**SWEEP_SCHEMA, "default": None, "nullable": True},
    },
    "required": ["generator", "model"],
}
