"""Runtime monitors: trace rows, maximum principles, Bochner and operator identities."""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import astuple, dataclass, field, fields
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray

from .bundle import (
    BundleSpec,
    FieldState,
    adjoint_link_derivatives,
    act,
    covariant_codifferential,
    covariant_d,
    covariant_laplacian,
    curvature,
    curvature_variation,
    dbar,
    dbar_adjoint,
    dbar_minus_del,
    higgs_current,
    site_curvature,
)
from .energy import check_tau, moment_map, quartic_density, ymh_total
from .lattice import (
    FormField,
    LatticeGeometry,
    center_two_form,
    inner,
    lambda_contract,
    laplacian,
    norm,
    pointwise_norm_sq,
    shift,
    type_decompose,
)
from .types import BradlowReport, InstabilityError, MonitorVerdict, TopologyError

if TYPE_CHECKING:
    from .flow import Tangent


@dataclass(frozen=True)
class MonitorTolerances:
    """Slack allowed by the trace monitors; all values are configurable."""

    max_principle: float = 1e-6
    ehat_monotone: float = 1e-6
    lambdaF_bound: float = 1e-6
    # absolute floor for the sup e-hat check when the run starts at a vortex
    ehat_floor: float = 1e-14
    holomorphy_threshold: float = 5e-2


# ──────────────────────────────────────────────────────────────────────────────
# Trace
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TraceRow:
    t: float
    ymh: float
    vortex_fn: float
    sup_phi_sq: float
    sup_ehat: float
    sup_lambdaF: float
    dbar_residual: float
    f02_residual: float
    moment_inf_norm: float
    dt_used: float

    def values(self) -> tuple[float, ...]:
        return astuple(self)


TRACE_COLUMNS: tuple[str, ...] = tuple(f.name for f in fields(TraceRow))


@dataclass
class DiagnosticsTrace:
    """Recorded monitor rows, strictly increasing in t and finite."""

    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        for name, value in zip(TRACE_COLUMNS, row.values()):
            if not math.isfinite(value):
                raise InstabilityError(name, row.t)
        if self.rows and row.t <= self.rows[-1].t:
            raise ValueError(
                f"trace rows must increase in t ({row.t} after {self.rows[-1].t})"
            )
        self.rows.append(row)

    def column(self, name: str) -> NDArray[np.float64]:
        if name not in TRACE_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(row, name) for row in self.rows], dtype=np.float64)

    @property
    def last(self) -> TraceRow:
        return self.rows[-1]

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self.rows)


def ehat_field(state: FieldState, tau: float) -> FormField:
    """Pointwise squared norm of the moment map density."""
    psi = moment_map(state, tau)
    return FormField(0, pointwise_norm_sq(psi)[np.newaxis], state.geom)


def trace_row(state: FieldState, tau: float, t: float, dt_used: float) -> TraceRow:
    """Evaluate every monitored quantity of a state."""
    psi = moment_map(state, tau)
    ehat = pointwise_norm_sq(psi)
    F_site = site_curvature(state)
    lambda_F = lambda_contract(F_site)
    _, _, F02 = type_decompose(F_site)
    sup_ehat = float(np.max(ehat))
    return TraceRow(
        t=t,
        ymh=ymh_total(state, tau),
        vortex_fn=inner(psi, psi),
        sup_phi_sq=float(np.max(np.sum(np.abs(state.phi_values) ** 2, axis=-1))),
        sup_ehat=sup_ehat,
        sup_lambdaF=float(math.sqrt(np.max(pointwise_norm_sq(lambda_F)))),
        dbar_residual=norm(dbar(state)),
        f02_residual=norm(F02),
        moment_inf_norm=math.sqrt(sup_ehat),
        dt_used=dt_used,
    )


# ──────────────────────────────────────────────────────────────────────────────
# Trace monitors
# ──────────────────────────────────────────────────────────────────────────────


def _verdict(slack: NDArray[np.float64], **details: object) -> MonitorVerdict:
    violations = np.flatnonzero(slack < 0)
    return MonitorVerdict(
        passed=violations.size == 0,
        margin=float(np.min(slack)) if slack.size else math.inf,
        first_violation=int(violations[0]) if violations.size else None,
        details=dict(details),
    )


def check_max_principle_phi(
    trace: DiagnosticsTrace, tau: float, tolerances: MonitorTolerances | None = None
) -> MonitorVerdict:
    """sup|phi(t)|^2 <= max(sup|phi_0|^2, tau) + tol on every recorded row.

    The unsquared bound sup|phi| <= max(sup|phi_0|, tau) is reported alongside
    in ``details`` without deciding the verdict.
    """
    tol = (tolerances or MonitorTolerances()).max_principle
    sup_sq = trace.column("sup_phi_sq")
    bound = max(float(sup_sq[0]), tau)
    slack = bound + tol - sup_sq
    unsquared_bound = max(math.sqrt(float(sup_sq[0])), tau)
    unsquared_slack = unsquared_bound + tol - np.sqrt(sup_sq)
    return _verdict(
        slack,
        bound=bound,
        unsquared_bound=unsquared_bound,
        unsquared_passed=bool(np.all(unsquared_slack >= 0)),
    )


def check_ehat_monotone(
    trace: DiagnosticsTrace, tolerances: MonitorTolerances | None = None
) -> MonitorVerdict:
    """sup e-hat is non-increasing from row to row within tol * initial value."""
    tol = tolerances or MonitorTolerances()
    sup_ehat = trace.column("sup_ehat")
    allowance = max(tol.ehat_monotone * float(sup_ehat[0]), tol.ehat_floor)
    slack = allowance - np.diff(sup_ehat)
    return _verdict(slack, allowance=allowance)


def check_lambdaF_bounded(
    trace: DiagnosticsTrace, tau: float, tolerances: MonitorTolerances | None = None
) -> MonitorVerdict:
    """sup|Lambda F| <= sup|Lambda F|(0) + sup e-hat(0)^{1/2} + tau/2 + tol."""
    tol = (tolerances or MonitorTolerances()).lambdaF_bound
    sup_lambda = trace.column("sup_lambdaF")
    first = trace.rows[0]
    bound = first.sup_lambdaF + math.sqrt(first.sup_ehat) + 0.5 * tau
    return _verdict(bound + tol - sup_lambda, bound=bound)


def bradlow_check(spec: BundleSpec, geom: LatticeGeometry, tau: float) -> BradlowReport:
    """Threshold 4 pi d / L^2 above which rank-1 vortices with phi != 0 exist.

    Negative degrees carry no holomorphic sections and are never feasible.
    """
    if spec.n != 1 or geom.m != 1:
        raise TopologyError("the Bradlow threshold is computed for n = 1, m = 1")
    threshold = 4.0 * math.pi * spec.d / geom.L**2
    borderline = math.isclose(tau, threshold, rel_tol=1e-12, abs_tol=1e-15)
    return BradlowReport(
        threshold=threshold,
        feasible=spec.d >= 0 and tau > threshold and not borderline,
        margin=tau - threshold,
        borderline=borderline,
    )


def convergence_order(
    errors: Sequence[float], resolutions: Sequence[int]
) -> list[float]:
    """Observed orders log(e_i / e_{i+1}) / log(N_{i+1} / N_i)."""
    orders = []
    for (e0, e1), (n0, n1) in zip(
        zip(errors, errors[1:]), zip(resolutions, resolutions[1:])
    ):
        if e0 <= 0 or e1 <= 0:
            orders.append(math.inf)
        else:
            orders.append(math.log(e0 / e1) / math.log(n1 / n0))
    return orders


# ──────────────────────────────────────────────────────────────────────────────
# Operator identities
# ──────────────────────────────────────────────────────────────────────────────


def _relative(difference: float, *scales: float) -> float:
    scale = max(scales)
    return difference / scale if scale > 0 else difference


def curvature_identity_residual(state: FieldState) -> float:
    """d_A^* F_A against i(del_A - dbar_A) Lambda F_A at link midpoints."""
    lhs = covariant_codifferential(state, curvature(state))
    lambda_F = lambda_contract(site_curvature(state)).data[0]
    rhs = -1j * dbar_minus_del(state, lambda_F)
    return _relative(norm(lhs - rhs), norm(lhs), norm(rhs))


def laplacian_identity_residual(state: FieldState) -> float:
    """d_A^* d_A phi - i Lambda F_A phi against 2 dbar_A^* dbar_A phi."""
    lambda_F = lambda_contract(site_curvature(state)).data[0]
    lhs = covariant_laplacian(state).data[0] - 1j * act(lambda_F, state.phi_values)
    lhs_form = FormField(0, lhs[np.newaxis], state.geom)
    rhs = 2.0 * dbar_adjoint(state, dbar(state))
    return _relative(norm(lhs_form - rhs), norm(lhs_form), norm(rhs))


def current_identity_residual(state: FieldState, tau: float) -> float:
    """(dbar_A - del_A)(phi phi^* - tau I) against -2 J_{A,phi} on holomorphic pairs."""
    lhs = dbar_minus_del(state, quartic_density(state, tau))
    rhs = -2.0 * higgs_current(state)
    return _relative(norm(lhs - rhs), norm(lhs), norm(rhs))


def _positive_laplacian(values: NDArray[np.float64], geom: LatticeGeometry) -> NDArray[np.float64]:
    f = FormField(0, values[np.newaxis], geom)
    return -laplacian(f).data[0].real


def _site_mean_over_links(link_values: NDArray[np.float64]) -> NDArray[np.float64]:
    """Average a per-link scalar onto sites from both adjacent links."""
    return sum(
        0.5 * (link_values[mu] + shift(link_values[mu], mu, -1))
        for mu in range(link_values.shape[0])
    )


def phi_bochner_residual(state: FieldState, tau: float, tangent: Tangent) -> float:
    """Pointwise (d/dt + Delta)|phi|^2 = |phi|^2 (tau - |phi|^2) - 2|d_A phi|^2.

    The time derivative is read off the flow velocity ``tangent``.
    """
    check_tau(tau)
    phi = state.phi_values
    phi_sq = np.sum(np.abs(phi) ** 2, axis=-1)
    rate = 2.0 * np.sum((np.conj(phi) * tangent.dphi.data[0]).real, axis=-1)
    lhs = rate + _positive_laplacian(phi_sq, state.geom)
    D = covariant_d(state).data
    grad_sq = _site_mean_over_links(np.sum(np.abs(D) ** 2, axis=-1))
    rhs = phi_sq * (tau - phi_sq) - 2.0 * grad_sq
    return _relative(
        float(np.max(np.abs(lhs - rhs))),
        float(np.max(np.abs(lhs))),
        float(np.max(np.abs(rhs))),
    )


def ehat_bochner_residual(state: FieldState, tau: float, tangent: Tangent) -> float:
    """Pointwise (d/dt + Delta) e-hat = -2|nabla_A Psi|^2 - 2|Psi phi|^2 on holomorphic pairs."""
    psi = moment_map(state, tau).data[0]
    phi = state.phi_values
    dphi = tangent.dphi.data[0]
    lambda_rate = lambda_contract(
        center_two_form(curvature_variation(state, tangent.dA))
    ).data[0]
    psi_rate = lambda_rate - 0.5j * (
        np.einsum("...i,...j->...ij", dphi, np.conj(phi))
        + np.einsum("...i,...j->...ij", phi, np.conj(dphi))
    )
    ehat = np.sum(np.abs(psi) ** 2, axis=(-2, -1))
    rate = 2.0 * np.sum((psi_rate * np.conj(psi)).real, axis=(-2, -1))
    lhs = rate + _positive_laplacian(ehat, state.geom)

    G = adjoint_link_derivatives(state, psi)
    # centred derivatives at sites: mean of the two links along each direction
    grad_sq = sum(
        np.sum(np.abs(0.5 * (G[mu, mu] + shift(G[mu, mu], mu, -1))) ** 2, axis=(-2, -1))
        for mu in range(state.geom.dim)
    )
    psi_phi = act(psi, phi)
    rhs = -2.0 * grad_sq - 2.0 * np.sum(np.abs(psi_phi) ** 2, axis=-1)
    return _relative(
        float(np.max(np.abs(lhs - rhs))),
        float(np.max(np.abs(lhs))),
        float(np.max(np.abs(rhs))),
    )


def holomorphy_defect(state: FieldState) -> float:
    """(||dbar_A phi|| + 2||F^{0,2}||) / (1 + ||phi|| + ||F||), zero on gauged holomorphic maps."""
    F_site = site_curvature(state)
    _, _, F02 = type_decompose(F_site)
    numerator = norm(dbar(state)) + 2.0 * norm(F02)
    return numerator / (1.0 + norm(state.phi) + norm(F_site))


def check_holomorphy_threshold(
    defects: Sequence[float], tolerances: MonitorTolerances | None = None
) -> MonitorVerdict:
    """Every recorded holomorphy defect stays below ``holomorphy_threshold``.

    ``defects`` holds ``holomorphy_defect`` of the recorded states in order.
    """
    threshold = (tolerances or MonitorTolerances()).holomorphy_threshold
    values = np.asarray(defects, dtype=np.float64)
    return _verdict(
        threshold - values,
        threshold=threshold,
        defect_max=float(np.max(values)) if values.size else 0.0,
    )


__all__ = [
    "DiagnosticsTrace",
    "MonitorTolerances",
    "TRACE_COLUMNS",
    "TraceRow",
    "bradlow_check",
    "check_ehat_monotone",
    "check_holomorphy_threshold",
    "check_lambdaF_bounded",
    "check_max_principle_phi",
    "convergence_order",
    "curvature_identity_residual",
    "current_identity_residual",
    "ehat_bochner_residual",
    "ehat_field",
    "holomorphy_defect",
    "laplacian_identity_residual",
    "phi_bochner_residual",
    "trace_row",
]
