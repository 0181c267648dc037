"""Gradient flows: the direct YMH flow, the vortex flow and the rank-1 metric flow.

The flow velocity of (A, phi) is

    dA/dt   = -(d_A^* F_A + J_{A,phi})
    dphi/dt = -d_A^* d_A phi + (1/2) phi (tau - |phi|^2)

with every adjoint the exact discrete adjoint, so the velocity is -1/2 times
the L^2 gradient of the discrete energy and accepted steps can be checked
against the energy itself.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .bundle import (
    FieldState,
    GaugeTransform,
    act,
    antihermitian_part,
    covariant_codifferential,
    covariant_laplacian,
    curvature,
    dbar,
    dbar_minus_del,
    gauge_transform,
    hermitian_shift,
    higgs_current,
    site_curvature,
)
from .config import debug_enabled
from .diagnostics import (
    DiagnosticsTrace,
    TraceRow,
    holomorphy_defect,
    trace_row,
)
from .energy import check_tau, moment_map, ymh_total
from .lattice import (
    FormField,
    LatticeGeometry,
    center_two_form,
    d_plus,
    inner,
    lambda_contract,
    norm,
)
from .types import (
    DivergenceError,
    HolomorphyError,
    InstabilityError,
    MetricObservables,
    ScheduleError,
    StepMethod,
    TopologyError,
)

DEFAULT_HOLOMORPHY_THRESHOLD = 5e-2
# relative energy increase tolerated before a step is rejected
ENERGY_SLACK = 1e-12
# dt floor in units of h^2
DT_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class Tangent:
    """A tangent vector (dA, dphi) at a pair."""

    dA: FormField
    dphi: FormField

    def __add__(self, other: Tangent) -> Tangent:
        return Tangent(self.dA + other.dA, self.dphi + other.dphi)

    def __mul__(self, scalar: float) -> Tangent:
        return Tangent(self.dA * scalar, self.dphi * scalar)

    __rmul__ = __mul__

    def inner(self, other: Tangent) -> float:
        return inner(self.dA, other.dA) + inner(self.dphi, other.dphi)

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))


# ──────────────────────────────────────────────────────────────────────────────
# Velocities
# ──────────────────────────────────────────────────────────────────────────────


def ymh_gradient(state: FieldState, tau: float) -> Tangent:
    """Velocity of the direct Yang-Mills-Higgs flow at ``state``."""
    check_tau(tau)
    F = curvature(state)
    dA = covariant_codifferential(state, F) + higgs_current(state)
    phi = state.phi_values
    phi_sq = np.sum(np.abs(phi) ** 2, axis=-1, keepdims=True)
    dphi = -covariant_laplacian(state).data[0] + 0.5 * phi * (tau - phi_sq)
    return Tangent(
        dA=FormField(1, -antihermitian_part(dA.data), state.geom),
        dphi=FormField(0, dphi[np.newaxis], state.geom),
    )


def vortex_gradient(
    state: FieldState, tau: float, threshold: float = DEFAULT_HOLOMORPHY_THRESHOLD
) -> Tangent:
    """Velocity of the vortex-functional flow, defined on gauged holomorphic pairs.

    dA = i (dbar_A - del_A) Psi and dphi = -i Psi phi, where Psi is the
    moment map. On holomorphic pairs this agrees with ``ymh_gradient``.

    Raises:
        HolomorphyError: If the pair is further than ``threshold`` from
            the holomorphic locus, measured by ``holomorphy_defect``
    """
    defect = holomorphy_defect(state)
    if defect > threshold:
        raise HolomorphyError(defect, threshold)
    psi = moment_map(state, tau).data[0]
    dA = 1j * dbar_minus_del(state, psi).data
    dphi = -1j * act(psi, state.phi_values)
    return Tangent(
        dA=FormField(1, antihermitian_part(dA), state.geom),
        dphi=FormField(0, dphi[np.newaxis], state.geom),
    )


def apply_tangent(state: FieldState, tangent: Tangent, dt: float) -> FieldState:
    return state.replace(A=state.A + tangent.dA * dt, phi=state.phi + tangent.dphi * dt)


# ──────────────────────────────────────────────────────────────────────────────
# Time stepping
# ──────────────────────────────────────────────────────────────────────────────


def _check_finite(state: FieldState, t: float) -> None:
    if not np.all(np.isfinite(state.A.data)):
        raise InstabilityError("A", t)
    if not np.all(np.isfinite(state.phi.data)):
        raise InstabilityError("phi", t)


Velocity = Callable[[FieldState, float], Tangent]


def step(
    state: FieldState,
    tau: float,
    dt: float,
    method: StepMethod = "rk4",
    t: float = 0.0,
    velocity: Velocity = ymh_gradient,
) -> FieldState:
    """Advance the pair by one explicit step of size ``dt`` from time ``t``.

    ``velocity`` defaults to the direct flow; pass ``vortex_gradient`` (with
    a threshold bound through ``functools.partial``) for the vortex flow.
    """
    if not dt > 0:
        raise ScheduleError(f"dt must be positive, got {dt}")
    if method == "euler":
        new = apply_tangent(state, velocity(state, tau), dt)
    elif method == "rk4":
        k1 = velocity(state, tau)
        k2 = velocity(apply_tangent(state, k1, 0.5 * dt), tau)
        k3 = velocity(apply_tangent(state, k2, 0.5 * dt), tau)
        k4 = velocity(apply_tangent(state, k3, dt), tau)
        combined = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (1.0 / 6.0)
        new = apply_tangent(state, combined, dt)
    else:
        raise ScheduleError(f"unknown step method {method!r}")
    _check_finite(new, t + dt)
    return new


@dataclass(frozen=True)
class FlowSchedule:
    """Explicit time-stepping plan shared by both flow engines."""

    dt_init: float
    t_end: float
    cfl_factor: float = 0.2
    adapt: bool = True
    record_every: int = 1
    method: StepMethod = "rk4"
    eps_vortex: float = 1e-3
    stop_at_vortex: bool = False

    @classmethod
    def for_geometry(
        cls, geom: LatticeGeometry, t_end: float, **kwargs: Any
    ) -> FlowSchedule:
        """Schedule starting at the largest CFL-admissible step."""
        cfl = kwargs.pop("cfl_factor", 0.2)
        return cls(
            dt_init=cfl * geom.h_spacing**2, t_end=t_end, cfl_factor=cfl, **kwargs
        )

    def validate(self, geom: LatticeGeometry) -> None:
        if not self.t_end > 0:
            raise ScheduleError(f"t_end must be positive, got {self.t_end}")
        if not self.cfl_factor > 0:
            raise ScheduleError(f"cfl_factor must be positive, got {self.cfl_factor}")
        if self.record_every < 1:
            raise ScheduleError(f"record_every must be >= 1, got {self.record_every}")
        if self.method not in ("euler", "rk4"):
            raise ScheduleError(f"unknown step method {self.method!r}")
        bound = self.cfl_factor * geom.h_spacing**2
        if not 0 < self.dt_init <= bound * (1 + 1e-12):
            raise ScheduleError(
                f"dt_init {self.dt_init:.3e} violates the CFL bound {bound:.3e}"
            )


@dataclass
class Trajectory:
    """Recorded states of a run together with step bookkeeping."""

    times: list[float] = field(default_factory=list)
    states: list[Any] = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0
    stopped_early: bool = False

    def record(self, t: float, state: Any) -> None:
        self.times.append(t)
        self.states.append(state)

    @property
    def final_state(self) -> Any:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return self.times[-1]


StepCallback = Callable[[int, float, Any], None]


def _finished(t: float, t_end: float) -> bool:
    return t_end - t <= 1e-12 * t_end


def integrate(
    state: FieldState,
    tau: float,
    schedule: FlowSchedule,
    on_step: StepCallback | None = None,
    velocity: Velocity = ymh_gradient,
) -> tuple[Trajectory, DiagnosticsTrace]:
    """Run the direct flow, or the flow of ``velocity``, to ``schedule.t_end``.

    A step whose energy rises by more than ENERGY_SLACK relative, or that
    produces non-finite values, is retried at half the step size when
    ``schedule.adapt`` is set. Monitor rows are recorded at t=0, every
    ``record_every`` accepted steps and at the final time.

    Args:
        state: Initial pair
        tau: Vortex parameter
        schedule: Time-stepping plan, validated against the lattice
        on_step: Called as ``on_step(step_index, t, state)`` after every
            accepted step
        velocity: Step velocity, as for ``step``

    Returns:
        The trajectory of recorded states and the diagnostics trace

    Raises:
        DivergenceError: If the adaptive step falls below 1e-10 h^2; the
            error carries the last accepted state and the partial trace
        HolomorphyError: If ``velocity`` is a vortex velocity and the pair
            leaves its holomorphy threshold
    """
    check_tau(tau)
    geom = state.geom
    schedule.validate(geom)
    dt_floor = DT_FLOOR * geom.h_spacing**2

    trace = DiagnosticsTrace()
    trajectory = Trajectory()
    trace.append(trace_row(state, tau, 0.0, 0.0))
    trajectory.record(0.0, state)

    t = 0.0
    dt = schedule.dt_init
    energy = ymh_total(state, tau)
    while not _finished(t, schedule.t_end):
        dt_step = min(dt, schedule.t_end - t)
        candidate: FieldState | None
        try:
            candidate = step(state, tau, dt_step, schedule.method, t, velocity)
            candidate_energy = ymh_total(candidate, tau)
            if not math.isfinite(candidate_energy):
                raise InstabilityError("ymh", t + dt_step)
        except InstabilityError:
            if not schedule.adapt:
                raise
            candidate = None
            candidate_energy = math.inf

        if schedule.adapt and (
            candidate is None or candidate_energy > energy + ENERGY_SLACK * abs(energy)
        ):
            dt = 0.5 * dt_step
            trajectory.rejected += 1
            if dt < dt_floor:
                raise DivergenceError(
                    f"step size {dt:.3e} fell below {dt_floor:.3e} at t={t:.6g}",
                    last_state=state,
                    t=t,
                    trace=trace,
                )
            continue

        assert candidate is not None
        state, energy = candidate, candidate_energy
        t += dt_step
        trajectory.accepted += 1

        if trajectory.accepted % schedule.record_every == 0 or _finished(
            t, schedule.t_end
        ):
            row = trace_row(state, tau, t, dt_step)
            trace.append(row)
            trajectory.record(t, state)
            if debug_enabled():
                print(
                    f"KVF_DEBUG step {trajectory.accepted} t={t:.6g} "
                    f"ymh={row.ymh:.12g} moment={row.moment_inf_norm:.3e}"
                )
            if schedule.stop_at_vortex and row.moment_inf_norm <= schedule.eps_vortex:
                trajectory.stopped_early = True
                break
        if on_step is not None:
            on_step(trajectory.accepted, t, state)

    return trajectory, trace


# ──────────────────────────────────────────────────────────────────────────────
# Rank-1 metric flow
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class MetricState:
    """Hermitian metric H = exp(2u) H_0 over a frozen initial pair."""

    u: FormField  # real 0-form
    base: FieldState

    def __post_init__(self) -> None:
        if self.base.spec.n != 1 or self.base.geom.m != 1:
            raise TopologyError("the metric flow is implemented for n = 1, m = 1")
        if self.u.degree != 0 or self.u.value_shape != ():
            raise TopologyError("u must be a scalar 0-form")

    @classmethod
    def initial(cls, base: FieldState) -> MetricState:
        return cls(u=FormField.zeros(base.geom, 0, (), np.float64), base=base)

    @property
    def values(self) -> NDArray[np.float64]:
        return self.u.data[0]

    def with_values(self, u: NDArray[np.float64]) -> MetricState:
        u_form = FormField(0, u[np.newaxis], self.base.geom)
        return MetricState(u=u_form, base=self.base)


def base_i_lambda_F(base: FieldState) -> NDArray[np.float64]:
    """i Lambda F_{A_0} at sites, a real scalar field."""
    lambda_F = lambda_contract(site_curvature(base)).data[0][..., 0, 0]
    return (1j * lambda_F).real


def base_phi_sq(base: FieldState) -> NDArray[np.float64]:
    return np.abs(base.phi_values[..., 0]) ** 2


def metric_laplacian(u: FormField) -> FormField:
    """Delta_h u = -i (Lambda F_H - Lambda F_0) for H = exp(2u) H_0.

    The change of the site-centred curvature under the rank-1 action of
    exp(u). It is linear, symmetric and non-positive, with symbol
    -[(1 + cos q) sin^2 k + (1 + cos k) sin^2 q] / (2 h^2), and agrees with
    the continuum Laplacian to second order.
    """
    geom = u.geom
    delta_F = center_two_form(d_plus(hermitian_shift(geom, u.data[0].real)))
    values = (-1j * lambda_contract(delta_F).data[0]).real
    return FormField(0, values[np.newaxis], geom)


def metric_flow_rhs(mstate: MetricState, tau: float) -> FormField:
    """du/dt = Delta_h u - i Lambda F_0 - (1/2)(|phi_0|^2 exp(2u) - tau) = -i Psi_H.

    Psi_H is the moment map of ``reconstructed_pair`` to rounding.
    """
    check_tau(tau)
    u = mstate.values
    rhs = (
        metric_laplacian(mstate.u).data[0]
        - base_i_lambda_F(mstate.base)
        - 0.5 * (base_phi_sq(mstate.base) * np.exp(2.0 * u) - tau)
    )
    return FormField(0, rhs[np.newaxis], mstate.base.geom)


def metric_functional(mstate: MetricState, tau: float) -> float:
    """Lyapunov functional of the metric flow, whose L^2 gradient is -du/dt.

    M(u) = sum h^2 [-u Delta_h u / 2 + i Lambda F_0 u + |phi_0|^2 exp(2u) / 4 - tau u / 2]
    """
    check_tau(tau)
    u = mstate.values
    density = (
        -0.5 * u * metric_laplacian(mstate.u).data[0]
        + base_i_lambda_F(mstate.base) * u
        + 0.25 * base_phi_sq(mstate.base) * np.exp(2.0 * u)
        - 0.5 * tau * u
    )
    return mstate.base.geom.cell_volume * float(np.sum(density))


def reconstructed_pair(mstate: MetricState) -> FieldState:
    """The pair exp(u) . (A_0, phi_0) in the complex gauge orbit of the base."""
    gauge = GaugeTransform.from_exponent(mstate.base.geom, u=mstate.values)
    return gauge_transform(mstate.base, gauge)


def metric_observables(mstate: MetricState, tau: float) -> MetricObservables:
    """Gauge-invariant observables of the metric flow, read off u."""
    u = mstate.values
    rhs = metric_flow_rhs(mstate, tau).data[0]
    return MetricObservables(
        phi_sq=base_phi_sq(mstate.base) * np.exp(2.0 * u),
        i_lambda_F=base_i_lambda_F(mstate.base) - metric_laplacian(mstate.u).data[0],
        moment=1j * rhs,
        ymh_total=ymh_total(reconstructed_pair(mstate), tau),
    )


def metric_trace_row(
    mstate: MetricState, tau: float, t: float, dt_used: float
) -> TraceRow:
    """Trace row of the metric flow, in the column schema of the direct flow."""
    obs = metric_observables(mstate, tau)
    geom = mstate.base.geom
    ehat = np.abs(obs["moment"]) ** 2
    pair = reconstructed_pair(mstate)
    return TraceRow(
        t=t,
        ymh=obs["ymh_total"],
        vortex_fn=float(geom.cell_volume * np.sum(ehat)),
        sup_phi_sq=float(np.max(obs["phi_sq"])),
        sup_ehat=float(np.max(ehat)),
        sup_lambdaF=float(np.max(np.abs(obs["i_lambda_F"]))),
        dbar_residual=norm(dbar(pair)),
        f02_residual=0.0,
        moment_inf_norm=float(math.sqrt(np.max(ehat))),
        dt_used=dt_used,
    )


def metric_step(
    mstate: MetricState, tau: float, dt: float, method: StepMethod = "rk4"
) -> MetricState:
    if not dt > 0:
        raise ScheduleError(f"dt must be positive, got {dt}")

    def rate(u: NDArray[np.float64]) -> NDArray[np.float64]:
        return metric_flow_rhs(mstate.with_values(u), tau).data[0]

    u = mstate.values
    if method == "euler":
        new = u + dt * rate(u)
    elif method == "rk4":
        k1 = rate(u)
        k2 = rate(u + 0.5 * dt * k1)
        k3 = rate(u + 0.5 * dt * k2)
        k4 = rate(u + dt * k3)
        new = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ScheduleError(f"unknown step method {method!r}")
    return mstate.with_values(new)


def integrate_metric_flow(
    mstate: MetricState,
    tau: float,
    schedule: FlowSchedule,
    on_step: StepCallback | None = None,
) -> tuple[Trajectory, DiagnosticsTrace]:
    """Run the scalar metric flow with the same schedule rules as ``integrate``.

    Steps are rejected when they raise ``metric_functional``.
    """
    check_tau(tau)
    geom = mstate.base.geom
    schedule.validate(geom)
    dt_floor = DT_FLOOR * geom.h_spacing**2

    trace = DiagnosticsTrace()
    trajectory = Trajectory()
    trace.append(metric_trace_row(mstate, tau, 0.0, 0.0))
    trajectory.record(0.0, mstate)

    t = 0.0
    dt = schedule.dt_init
    functional = metric_functional(mstate, tau)
    scale = abs(functional)
    while not _finished(t, schedule.t_end):
        dt_step = min(dt, schedule.t_end - t)
        candidate = metric_step(mstate, tau, dt_step, schedule.method)
        finite = bool(np.all(np.isfinite(candidate.values)))
        candidate_functional = metric_functional(candidate, tau) if finite else math.inf
        if not math.isfinite(candidate_functional) and not schedule.adapt:
            raise InstabilityError("u", t + dt_step)
        slack = ENERGY_SLACK * max(scale, abs(functional))
        if schedule.adapt and not candidate_functional <= functional + slack:
            dt = 0.5 * dt_step
            trajectory.rejected += 1
            if dt < dt_floor:
                raise DivergenceError(
                    f"step size {dt:.3e} fell below {dt_floor:.3e} at t={t:.6g}",
                    last_state=reconstructed_pair(mstate),
                    t=t,
                    trace=trace,
                )
            continue

        mstate, functional = candidate, candidate_functional
        t += dt_step
        trajectory.accepted += 1
        if trajectory.accepted % schedule.record_every == 0 or _finished(
            t, schedule.t_end
        ):
            row = metric_trace_row(mstate, tau, t, dt_step)
            trace.append(row)
            trajectory.record(t, mstate)
            if debug_enabled():
                print(
                    f"KVF_DEBUG metric step {trajectory.accepted} t={t:.6g} "
                    f"ymh={row.ymh:.12g} moment={row.moment_inf_norm:.3e}"
                )
            if schedule.stop_at_vortex and row.moment_inf_norm <= schedule.eps_vortex:
                trajectory.stopped_early = True
                break
        if on_step is not None:
            on_step(trajectory.accepted, t, mstate)

    return trajectory, trace


def linearized_operator(mstate: MetricState) -> spla.LinearOperator:
    """Delta_h - |phi_0|^2 exp(2u) acting on flattened site fields.

    This is the derivative of ``metric_flow_rhs`` with respect to u.
    """
    geom = mstate.base.geom
    shape = geom.grid_shape
    weight = base_phi_sq(mstate.base) * np.exp(2.0 * mstate.values)

    def matvec(v: NDArray[np.float64]) -> NDArray[np.float64]:
        values = np.asarray(v, dtype=np.float64).reshape(shape)
        lap = metric_laplacian(FormField(0, values[np.newaxis], geom)).data[0]
        return (lap - weight * values).ravel()

    size = math.prod(shape)
    return spla.LinearOperator((size, size), matvec=matvec, dtype=np.float64)


def linearized_max_eigenvalue(mstate: MetricState, tol: float = 1e-12) -> float:
    """Largest eigenvalue of the linearized metric flow, by Lanczos iteration."""
    operator = linearized_operator(mstate)
    size = operator.shape[0]
    v0 = np.ones(size) + 1e-3 * np.cos(np.arange(size))
    top = spla.eigsh(
        operator, k=1, which="LA", v0=v0, tol=tol, return_eigenvectors=False
    )
    return float(top[0])


__all__ = [
    "DEFAULT_HOLOMORPHY_THRESHOLD",
    "FlowSchedule",
    "MetricState",
    "Tangent",
    "Trajectory",
    "Velocity",
    "base_i_lambda_F",
    "base_phi_sq",
    "apply_tangent",
    "integrate",
    "integrate_metric_flow",
    "linearized_max_eigenvalue",
    "linearized_operator",
    "metric_flow_rhs",
    "metric_functional",
    "metric_laplacian",
    "metric_observables",
    "metric_step",
    "metric_trace_row",
    "reconstructed_pair",
    "step",
    "vortex_gradient",
    "ymh_gradient",
]
