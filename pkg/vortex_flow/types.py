"""Shared type definitions and the error hierarchy for vortex-flow."""

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Literal, TypedDict

if TYPE_CHECKING:
    from .bundle import FieldState
    from .diagnostics import DiagnosticsTrace


# Time integration schemes understood by ``flow.step``
StepMethod = Literal["euler", "rk4"]

# Which evolution equation a run integrates
FlowEngine = Literal["direct", "metric", "vortex"]

# Initial-data generators exposed to configuration
InitKind = Literal["theta", "constant", "random"]


# ──────────────────────────────────────────────────────────────────────────────
# Errors
# ──────────────────────────────────────────────────────────────────────────────


class VortexFlowError(Exception):
    """Base class for errors raised by vortex-flow."""


class LatticeError(VortexFlowError):
    """Invalid geometry, degree overflow or mismatched form fields."""


class TopologyError(VortexFlowError):
    """Unsupported combination of complex dimension, rank and degree."""


class SeriesTruncationError(TopologyError):
    """Theta series truncated too early for the requested accuracy."""


class GaugeError(VortexFlowError):
    """Gauge transformation that cannot be applied."""


class ParameterError(VortexFlowError):
    """Numerical parameter outside its admissible range."""


class HolomorphyError(VortexFlowError):
    """Pair is too far from the space of gauged holomorphic maps."""

    def __init__(self, defect: float, threshold: float) -> None:
        super().__init__(
            f"holomorphy defect {defect:.3e} exceeds threshold {threshold:.3e}"
        )
        self.defect = defect
        self.threshold = threshold


class ScheduleError(VortexFlowError):
    """Invalid time-stepping schedule."""


class InstabilityError(VortexFlowError):
    """Non-finite values appeared after a time step."""

    def __init__(self, monitor: str, t: float) -> None:
        super().__init__(f"non-finite {monitor} after step ending at t={t:.6g}")
        self.monitor = monitor
        self.t = t


class DivergenceError(VortexFlowError):
    """Adaptive step size underflowed; carries the last accepted state."""

    def __init__(
        self,
        message: str,
        *,
        last_state: FieldState | None = None,
        t: float = 0.0,
        trace: DiagnosticsTrace | None = None,
    ) -> None:
        super().__init__(message)
        self.last_state = last_state
        self.t = t
        self.trace = trace


class InfeasibleError(VortexFlowError):
    """Bradlow obstruction: no vortex with nonzero section exists at this tau."""

    def __init__(self, message: str, report: BradlowReport) -> None:
        super().__init__(message)
        self.report = report


class ConvergenceError(VortexFlowError):
    """Iterative solver exhausted its budget."""

    def __init__(self, message: str, residual_history: list[float]) -> None:
        super().__init__(message)
        self.residual_history = residual_history


class ArtifactError(VortexFlowError):
    """Stored run artifact is truncated or has the wrong layout."""


class ConfigError(VortexFlowError):
    """Config file could not be parsed or failed validation."""

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


# ──────────────────────────────────────────────────────────────────────────────
# Report payloads
# ──────────────────────────────────────────────────────────────────────────────


class BradlowReport(TypedDict):
    """Feasibility of the rank-1 vortex equations on a torus."""

    threshold: float  # 4*pi*d / L^2
    feasible: bool
    margin: float  # tau - threshold
    borderline: bool


class TopologicalConstants(TypedDict):
    """Chern-Weil numbers entering the energy identity."""

    c1: float
    ch2: float
    topo_const: float


class MonitorVerdict(TypedDict):
    """Outcome of a trace monitor."""

    passed: bool
    margin: float  # smallest slack over all rows, negative on failure
    first_violation: int | None  # row index
    details: dict[str, Any]


class MetricObservables(TypedDict):
    """Gauge-invariant quantities of the rank-1 metric flow."""

    phi_sq: Any  # ndarray of |phi|^2_H at sites
    i_lambda_F: Any  # ndarray of i Lambda F_H at sites
    moment: Any  # ndarray of Psi_H (purely imaginary scalars)
    ymh_total: float
