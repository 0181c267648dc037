"""Independent reference values: finite-difference gradients, the stationary
Kazdan-Warner solver and closed-form energies."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from .bundle import BundleSpec, FieldState
from .config import debug_enabled
from .diagnostics import bradlow_check
from .energy import check_tau, moment_map, ymh_total
from .flow import (
    MetricState,
    Tangent,
    apply_tangent,
    base_i_lambda_F,
    base_phi_sq,
    linearized_operator,
    metric_flow_rhs,
    reconstructed_pair,
    ymh_gradient,
)
from .lattice import FormField, LatticeGeometry
from .types import (
    ConvergenceError,
    InfeasibleError,
    ParameterError,
    TopologyError,
)

FD_EPS_RANGE = (1e-7, 1e-3)
# sup |Psi| of the reconstructed pair allowed per unit of the Newton tolerance
MOMENT_FACTOR = 10.0


# ──────────────────────────────────────────────────────────────────────────────
# Finite-difference gradient
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Coordinate:
    """One real coordinate of a pair.

    ``index`` addresses the data array of A (without the matrix axes) or of
    phi (including the vector axis); ``basis`` picks an anti-Hermitian basis
    matrix for A, or 0/1 for the real/imaginary part of phi.
    """

    target: Literal["A", "phi"]
    index: tuple[int, ...]
    basis: int


def antihermitian_basis(n: int) -> list[NDArray[np.complex128]]:
    """Real basis of u(n) for n = 1, 2."""
    if n == 1:
        return [np.array([[1j]])]
    if n == 2:
        return [
            np.array([[1j, 0], [0, 0]]),
            np.array([[0, 0], [0, 1j]]),
            np.array([[0, 1], [-1, 0]], dtype=np.complex128),
            np.array([[0, 1j], [1j, 0]]),
        ]
    raise TopologyError(f"rank must be 1 or 2, got {n}")


def _direction(state: FieldState, coordinate: Coordinate) -> Tangent:
    dA = FormField.zeros(state.geom, 1, (state.spec.n, state.spec.n))
    dphi = FormField.zeros(state.geom, 0, (state.spec.n,))
    if coordinate.target == "A":
        dA.data[coordinate.index] = antihermitian_basis(state.spec.n)[coordinate.basis]
    else:
        dphi.data[coordinate.index] = 1.0 if coordinate.basis == 0 else 1j
    return Tangent(dA, dphi)


def random_coordinates(
    state: FieldState, count: int, seed: int = 0
) -> list[Coordinate]:
    """Sample ``count`` coordinates, alternating between A and phi."""
    if count < 1:
        raise ParameterError("the coordinate sample must not be empty")
    rng = np.random.default_rng(seed)
    geom, n = state.geom, state.spec.n
    basis_count = len(antihermitian_basis(n))
    sample = []
    for k in range(count):
        site = tuple(int(i) for i in rng.integers(0, geom.N, size=geom.dim))
        if k % 2 == 0:
            mu = int(rng.integers(0, geom.dim))
            basis = int(rng.integers(0, basis_count))
            sample.append(Coordinate("A", (mu, *site), basis))
        else:
            component = int(rng.integers(0, n))
            part = int(rng.integers(0, 2))
            sample.append(Coordinate("phi", (0, *site, component), part))
    return sample


@dataclass
class GradientCheck:
    """Finite-difference and analytic derivatives of ymh on sampled coordinates."""

    eps: float
    coordinates: list[Coordinate]
    numeric: NDArray[np.float64]
    analytic: NDArray[np.float64]
    scale: float = field(init=False)

    def __post_init__(self) -> None:
        self.scale = float(np.max(np.abs(self.analytic), initial=0.0))

    @property
    def max_abs_deviation(self) -> float:
        return float(np.max(np.abs(self.numeric - self.analytic)))

    def max_relative_deviation(self, floor: float) -> float:
        """Largest deviation relative to the largest analytic entry (at least ``floor``)."""
        return self.max_abs_deviation / max(self.scale, floor)


def fd_gradient(
    state: FieldState, tau: float, eps: float, sample: Sequence[Coordinate]
) -> GradientCheck:
    """Central differences of ymh on the sampled coordinates.

    Raises:
        ParameterError: If ``eps`` is outside [1e-7, 1e-3] or the sample is empty
    """
    check_tau(tau)
    low, high = FD_EPS_RANGE
    if not low <= eps <= high:
        raise ParameterError(f"eps must lie in [{low:g}, {high:g}], got {eps}")
    if not sample:
        raise ParameterError("the coordinate sample must not be empty")

    tangent = ymh_gradient(state, tau)
    numeric = np.empty(len(sample))
    analytic = np.empty(len(sample))
    for k, coordinate in enumerate(sample):
        direction = _direction(state, coordinate)
        plus = apply_tangent(state, direction, eps)
        minus = apply_tangent(state, direction, -eps)
        numeric[k] = (ymh_total(plus, tau) - ymh_total(minus, tau)) / (2.0 * eps)
        # the flow velocity is -1/2 times the L^2 gradient
        analytic[k] = -2.0 * tangent.inner(direction)
    return GradientCheck(
        eps=eps, coordinates=list(sample), numeric=numeric, analytic=analytic
    )


def eps_sweep(
    state: FieldState,
    tau: float,
    sample: Sequence[Coordinate],
    eps_values: Sequence[float] = (1e-3, 1e-5, 1e-7),
) -> list[tuple[float, float]]:
    """Maximum absolute deviation for each step size."""
    return [
        (eps, fd_gradient(state, tau, eps, sample).max_abs_deviation)
        for eps in eps_values
    ]


# ──────────────────────────────────────────────────────────────────────────────
# Stationary metric equation
# ──────────────────────────────────────────────────────────────────────────────


@dataclass
class KWSolution:
    """Converged stationary metric and the Newton residual history."""

    metric: MetricState
    tau: float
    residual_history: list[float]
    iterations: int
    moment_inf_norm: float

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


def _sup(values: NDArray[np.float64]) -> float:
    return float(np.max(np.abs(values)))


def _check_feasible(base: FieldState, tau: float) -> None:
    spec, geom = base.spec, base.geom
    if spec.n != 1 or geom.m != 1:
        raise TopologyError("the stationary solver needs n = 1 and m = 1")
    if not np.any(base_phi_sq(base) > 0):
        raise InfeasibleError(
            "the section vanishes identically", bradlow_check(spec, geom, tau)
        )
    # zero-mean compatibility: mean(|phi_H|^2) / 2 = tau / 2 - mean(i Lambda F_0)
    budget = 0.5 * tau - float(np.mean(base_i_lambda_F(base)))
    if budget <= 1e-12 * tau:
        report = bradlow_check(spec, geom, tau)
        raise InfeasibleError(
            f"tau = {tau:g} does not exceed the Bradlow threshold "
            f"{report['threshold']:g}",
            report,
        )


def _newton(
    mstate: MetricState, tau: float, tol: float, max_iter: int
) -> tuple[MetricState, list[float]]:
    shape = mstate.base.geom.grid_shape
    size = math.prod(shape)

    residual = metric_flow_rhs(mstate, tau).data[0]
    history = [_sup(residual)]
    for iteration in range(max_iter):
        if history[-1] <= tol:
            return mstate, history
        # W - Delta_h is symmetric positive definite when phi_0 != 0
        operator = -linearized_operator(mstate)
        delta, info = spla.cg(
            operator, residual.ravel(), rtol=1e-10, atol=0.0, maxiter=20 * size
        )
        if info != 0:
            reason = "broke down" if info < 0 else f"stalled after {info} iterations"
            raise ConvergenceError(f"conjugate gradients {reason}", history)
        delta = delta.reshape(shape)

        damping = 1.0
        while True:
            candidate = mstate.with_values(mstate.values + damping * delta)
            candidate_residual = metric_flow_rhs(candidate, tau).data[0]
            if _sup(candidate_residual) <= history[-1] or damping < 1e-3:
                break
            damping *= 0.5
        mstate, residual = candidate, candidate_residual
        history.append(_sup(residual))
        if debug_enabled():
            print(
                f"KVF_DEBUG newton {iteration + 1} residual={history[-1]:.3e} "
                f"damping={damping:g}"
            )
    if history[-1] <= tol:
        return mstate, history
    raise ConvergenceError(
        f"Newton did not reach {tol:g} in {max_iter} iterations "
        f"(residual {history[-1]:.3e})",
        history,
    )


def kw_solve(
    base: FieldState,
    tau: float,
    tol: float = 1e-10,
    max_iter: int = 100,
    continuation: Sequence[float] | None = None,
) -> KWSolution:
    """Solve Delta_h u - i Lambda F_0 - (|phi_0|^2 e^{2u} - tau) / 2 = 0 for u.

    Damped Newton from u = 0; each linear system (W - Delta_h) delta = R with
    W = |phi_0|^2 e^{2u} is solved by conjugate gradients. With
    ``continuation``, the listed tau values are solved first in order, each
    warm-starting the next.

    Args:
        base: Frozen pair (A_0, phi_0), rank 1 over a curve
        tau: Target vortex parameter
        tol: Sup-norm tolerance on the stationary residual
        max_iter: Newton iterations allowed per tau value
        continuation: Intermediate tau values leading up to ``tau``

    Returns:
        The converged metric with its residual history

    Raises:
        InfeasibleError: If tau does not exceed the Bradlow threshold or phi_0 = 0
        ConvergenceError: If Newton or CG fails to converge, or the
            reconstructed pair has sup |Psi| above MOMENT_FACTOR * tol
    """
    check_tau(tau)
    _check_feasible(base, tau)
    path = [t for t in (continuation or ()) if t != tau] + [tau]
    mstate = MetricState.initial(base)
    history: list[float] = []
    iterations = 0
    for target in path:
        check_tau(target)
        _check_feasible(base, target)
        mstate, stage_history = _newton(mstate, target, tol, max_iter)
        history.extend(stage_history)
        iterations += len(stage_history) - 1

    moment = _sup(moment_map(reconstructed_pair(mstate), tau).data)
    if moment > MOMENT_FACTOR * tol:
        raise ConvergenceError(
            f"moment map of the reconstructed pair is {moment:.3e}, "
            f"above {MOMENT_FACTOR:g} x tol",
            history,
        )
    return KWSolution(
        metric=mstate,
        tau=tau,
        residual_history=history,
        iterations=iterations,
        moment_inf_norm=moment,
    )


# ──────────────────────────────────────────────────────────────────────────────
# Closed forms
# ──────────────────────────────────────────────────────────────────────────────


def plateau_energy(spec: BundleSpec, geom: LatticeGeometry, tau: float) -> float:
    """Energy 4 pi^2 d^2 / L^2 + tau^2 L^2 / 4 of the constant-curvature pair with phi = 0."""
    check_tau(tau)
    if spec.n != 1 or geom.m != 1:
        raise TopologyError("the plateau energy is defined for n = 1, m = 1")
    return 4.0 * math.pi**2 * spec.d**2 / geom.L**2 + tau**2 * geom.L**2 / 4.0


def constant_data_solution(rho0: float, tau: float, t: Any) -> Any:
    """|phi|^2(t) for spatially constant data, solving rho' = rho (tau - rho).

    Accepts scalar or array times.
    """
    check_tau(tau)
    return tau * rho0 / (rho0 + (tau - rho0) * np.exp(-tau * np.asarray(t)))


__all__ = [
    "Coordinate",
    "FD_EPS_RANGE",
    "GradientCheck",
    "KWSolution",
    "antihermitian_basis",
    "constant_data_solution",
    "eps_sweep",
    "fd_gradient",
    "kw_solve",
    "plateau_energy",
    "random_coordinates",
]
