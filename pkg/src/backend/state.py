"""
RunState dataclass tracking one simulation run from dispatch to manifest.
"""

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Optional


class RunStatus(Enum):
    """Current status of a run."""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class Artifact:
    """One file written by the run."""
    path: Path
    kind: str  # e.g. "trajectory", "coefficients", "rates", "field", "manifest"
    description: Optional[str] = None


@dataclass
class Finding:
    """A result worth reporting that is not a failure (positivity excursion, tail weight, ...)."""
    message: str
    source: str
    timestamp: datetime = field(default_factory=datetime.now)


@dataclass
class RunState:
    """
    Complete state for a single run.

    The runner updates it as artifacts are written; it is serialized into the
    reproducibility manifest at the end, whether the run succeeded or not.
    """
    run_id: str
    kind: str
    started_at: datetime = field(default_factory=datetime.now)
    ended_at: Optional[datetime] = None
    status: RunStatus = RunStatus.PENDING

    artifacts: list[Artifact] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    error: Optional[dict[str, Any]] = None

    def start(self) -> None:
        self.status = RunStatus.RUNNING
        self.started_at = datetime.now()

    def add_artifact(self, path: Path, kind: str, description: Optional[str] = None) -> Path:
        self.artifacts.append(Artifact(path=Path(path), kind=kind, description=description))
        return Path(path)

    def add_findings(self, messages: list[str], source: str) -> None:
        for message in messages:
            self.findings.append(Finding(message=message, source=source))

    def mark_completed(self) -> None:
        self.status = RunStatus.COMPLETED
        self.ended_at = datetime.now()

    def mark_failed(self, exc: BaseException) -> None:
        """Machine-readable error record; PropagationError time is kept when present."""
        self.status = RunStatus.FAILED
        self.ended_at = datetime.now()
        self.error = {"success": False, "error": str(exc), "type": type(exc).__name__}
        if hasattr(exc, "time"):
            self.error["time"] = getattr(exc, "time")
        if hasattr(exc, "path") and getattr(exc, "path"):
            self.error["path"] = getattr(exc, "path")

    @property
    def wall_time(self) -> Optional[float]:
        if self.ended_at is None:
            return None
        return (self.ended_at - self.started_at).total_seconds()

    @property
    def succeeded(self) -> bool:
        return self.status == RunStatus.COMPLETED
