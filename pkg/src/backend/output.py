"""
Output generation for runs.

Writes CSV tables (shortest round-trip decimal floats) and converts RunState
into the JSON reproducibility manifest.
"""

import csv
import json
import math
import platform
from dataclasses import is_dataclass
from datetime import datetime
from enum import Enum
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import scipy

from src.backend.bath import CoeffSet
from src.backend.state import RunState, RunStatus

FAILED_MARKER = "FAILED"


def _format_number(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _serialize_value(value: Any) -> Any:
    """Serialize a value for JSON output."""
    if isinstance(value, datetime):
        return value.isoformat()
    elif isinstance(value, Enum):
        return value.value
    elif isinstance(value, Path):
        return str(value)
    elif isinstance(value, np.ndarray):
        return [_serialize_value(item) for item in value.tolist()]
    elif isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    elif isinstance(value, np.integer):
        return int(value)
    elif isinstance(value, (set, tuple)):
        return [_serialize_value(item) for item in value]
    elif is_dataclass(value) and not isinstance(value, type):
        return _serialize_dataclass(value)
    elif isinstance(value, list):
        return [_serialize_value(item) for item in value]
    elif isinstance(value, dict):
        return {str(k): _serialize_value(v) for k, v in value.items()}
    return value


def _serialize_dataclass(obj: Any) -> dict[str, Any]:
    """Recursively serialize a dataclass to a dict."""
    result = {}
    for field_name in obj.__dataclass_fields__:
        value = getattr(obj, field_name)
        if callable(value):
            continue
        result[field_name] = _serialize_value(value)
    return result


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_number(v) for v in row])
    return path


def write_matrix_csv(path: Path, matrix: np.ndarray, row_label: str = "i", column_label: str = "f") -> Path:
    """Dense real matrix with a leading index column."""
    matrix = np.asarray(matrix, dtype=float)
    header = [f"{row_label}\\{column_label}"] + [str(j) for j in range(matrix.shape[1])]
    rows = ([i] + matrix[i].tolist() for i in range(matrix.shape[0]))
    return write_csv(path, header, rows)


def write_coefficients_csv(path: Path, coeffs: CoeffSet) -> Path:
    frequencies = coeffs.frequencies()
    rows = (
        [int(w), frequencies[i], coeffs.a_F[i], coeffs.b_F[i], coeffs.a_G[i], coeffs.b_G[i]]
        for i, w in enumerate(coeffs.omegas)
    )
    return write_csv(path, ["omega", "energy", "a_F", "b_F", "a_G", "b_G"], rows)


def package_versions() -> dict[str, str]:
    try:
        own = metadata.version("ahsim")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {
        "ahsim": own,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def generate_manifest(state: RunState, config: Optional[dict[str, Any]] = None,
                      config_hash: Optional[str] = None) -> dict[str, Any]:
    """
    Generate the manifest dict from RunState.

    `config` is the fully resolved configuration, so every default that
    influenced the numerics is recorded.
    """
    return {
        "meta": {
            "run_id": state.run_id,
            "kind": state.kind,
            "started_at": state.started_at.isoformat(),
            "ended_at": state.ended_at.isoformat() if state.ended_at else None,
            "wall_time_s": state.wall_time,
            "status": state.status.value,
            "config_hash": config_hash,
            "versions": package_versions(),
        },
        "config": _serialize_value(config) if config is not None else None,
        "summary": _serialize_value(state.summary),
        "findings": [_serialize_dataclass(f) for f in state.findings],
        "artifacts": [_serialize_dataclass(a) for a in state.artifacts],
        "error": state.error,
    }


def save_manifest(state: RunState, output_dir: Path, config: Optional[dict[str, Any]] = None,
                  config_hash: Optional[str] = None, prefix: str = "run") -> Path:
    """
    Save the manifest as JSON; a failed run also gets a FAILED marker file
    holding the error record.
    """
    output_path = Path(output_dir)
    output_path.mkdir(parents=True, exist_ok=True)

    filepath = output_path / f"{prefix}_manifest.json"
    manifest = generate_manifest(state, config, config_hash)
    with open(filepath, "w") as f:
        json.dump(manifest, f, indent=2)

    if state.status == RunStatus.FAILED:
        with open(output_path / FAILED_MARKER, "w") as f:
            json.dump(state.error, f, indent=2)
    return filepath


def print_summary(state: RunState) -> None:
    """Print a human-readable summary of the run to console."""
    print("\n" + "=" * 60)
    print("RUN SUMMARY")
    print("=" * 60)

    print(f"\nRun ID: {state.run_id}")
    print(f"Kind: {state.kind}")
    print(f"Status: {state.status.value}")
    if state.wall_time is not None:
        print(f"Wall time: {state.wall_time:.2f} s")

    for key, value in state.summary.items():
        if isinstance(value, float):
            print(f"  {key}: {value:.6g}")
        elif not isinstance(value, (list, dict)):
            print(f"  {key}: {value}")

    if state.findings:
        print(f"\nFindings ({len(state.findings)}):")
        for finding in state.findings:
            print(f"  - [{finding.source}] {finding.message}")

    if state.artifacts:
        print(f"\nArtifacts ({len(state.artifacts)}):")
        for artifact in state.artifacts:
            print(f"  - {artifact.kind}: {artifact.path}")

    if state.error:
        print(f"\nERROR ({state.error['type']}): {state.error['error']}")

    print("\n" + "=" * 60)
