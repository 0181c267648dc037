"""vortex-flow - lattice gradient flows of the vortex functional on flat tori.

Simulates the Yang-Mills-Higgs gradient flow of connection/section pairs on
Kähler tori, the equivalent vortex-functional flow and the rank-1 Hermitian
metric heat flow, with runtime monitors and independent oracles.
"""

__version__ = "0.1.0"

from .config import apply_thread_limit  # noqa: E402

# must run before numpy is first imported
apply_thread_limit()

from .bundle import BundleSpec, FieldState, theta_state  # noqa: E402
from .energy import energy_identity, moment_map, ymh  # noqa: E402
from .flow import (  # noqa: E402
    FlowSchedule,
    MetricState,
    integrate,
    integrate_metric_flow,
    vortex_gradient,
    ymh_gradient,
)
from .lattice import FormField, LatticeGeometry, build_torus  # noqa: E402
from .types import VortexFlowError  # noqa: E402

__all__ = [
    # Geometry and fields
    "LatticeGeometry",
    "FormField",
    "build_torus",
    # Bundles and pairs
    "BundleSpec",
    "FieldState",
    "theta_state",
    # Energies
    "ymh",
    "moment_map",
    "energy_identity",
    # Flows
    "FlowSchedule",
    "MetricState",
    "integrate",
    "integrate_metric_flow",
    "vortex_gradient",
    "ymh_gradient",
    # Shared types
    "VortexFlowError",
]
