"""Bundles, connection/section pairs and their covariant calculus.

The connection is stored as a periodic anti-Hermitian perturbation ``a`` of a
fixed background ``A_bg`` realizing the degree. ``A_mu`` stored at site x lives
on the link x -> x + e_mu, and couples to the link average of the section:

    D_mu phi = (T_mu phi - phi) / h + A_mu (phi + T_mu phi) / 2

where ``T_mu`` is the twisted shift. Type-sensitive quantities (the split of
d_A phi, the Dolbeault operators) use the site-centred covariant derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .lattice import (
    FormField,
    LatticeGeometry,
    antiholomorphic_projector,
    band_limited_field,
    center_two_form,
    centered_difference,
    codifferential,
    components,
    d_plus,
    forward_difference,
    holomorphic_projector,
    kahler_pairs,
    lambda_contract,
    link_derivative,
    shift,
    type_component,
)
from .types import GaugeError, SeriesTruncationError, TopologyError

TWIST_CONVENTION = "thooft-x1"
UNITARY_TOLERANCE = 1e-12


# ──────────────────────────────────────────────────────────────────────────────
# Topology
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class BundleSpec:
    """Rank, degree and twist convention of the Hermitian bundle E."""

    n: int
    d: int
    twist: str = TWIST_CONVENTION


def validate_topology(spec: BundleSpec, geom: LatticeGeometry) -> None:
    """Reject bundles the lattice cannot represent."""
    if spec.n not in (1, 2):
        raise TopologyError(f"rank must be 1 or 2, got {spec.n}")
    if spec.twist != TWIST_CONVENTION:
        raise TopologyError(f"unknown twist convention {spec.twist!r}")
    if spec.d != 0 and (geom.m != 1 or spec.n != 1):
        raise TopologyError(
            f"degree {spec.d} needs m = 1 and n = 1 (got m = {geom.m}, n = {spec.n})"
        )


def twist_phase(spec: BundleSpec, geom: LatticeGeometry) -> NDArray[np.complex128]:
    """Transition function exp(2 pi i d y / L) at the sites of the y1 axis."""
    y = np.arange(geom.N) * geom.h_spacing
    return np.exp(2j * np.pi * spec.d * y / geom.L)


def transport(
    spec: BundleSpec,
    geom: LatticeGeometry,
    arr: NDArray[Any],
    axis: int,
    step: int = 1,
) -> NDArray[Any]:
    """Read a section-valued grid-leading array one site over.

    Wrapping across the x1 boundary applies the twist, so that the result is
    the continuous extension phi(x + step * e_axis) in the gauge of x.
    """
    if step not in (1, -1):
        raise ValueError(f"transport step must be +1 or -1, got {step}")
    out = shift(arr, axis, step)
    if spec.d != 0 and axis == 0:
        phase = twist_phase(spec, geom).reshape((geom.N,) + (1,) * (arr.ndim - 2))
        if step == 1:
            out[-1] = out[-1] * phase
        else:
            out[0] = out[0] * np.conj(phase)
    return out


# ──────────────────────────────────────────────────────────────────────────────
# States
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class FieldState:
    """A connection/section pair (A, phi) over a fixed background."""

    spec: BundleSpec
    geom: LatticeGeometry
    A: FormField  # periodic anti-Hermitian perturbation, values n x n
    phi: FormField  # section on the fundamental domain, values C^n

    def __post_init__(self) -> None:
        n = self.spec.n
        if self.A.degree != 1 or self.A.value_shape != (n, n):
            raise TopologyError(f"A must be a 1-form with {n}x{n} values")
        if self.phi.degree != 0 or self.phi.value_shape != (n,):
            raise TopologyError(f"phi must be a 0-form with values in C^{n}")

    @property
    def phi_values(self) -> NDArray[np.complex128]:
        """Section values as a grid-leading ``(*grid, n)`` array."""
        return self.phi.data[0]

    def replace(
        self, *, A: FormField | None = None, phi: FormField | None = None
    ) -> FieldState:
        return replace(
            self,
            A=self.A if A is None else A,
            phi=self.phi if phi is None else phi,
        )


def antihermitian_part(M: NDArray[Any]) -> NDArray[Any]:
    return 0.5 * (M - np.conj(np.swapaxes(M, -1, -2)))


def hermitian_defect(M: NDArray[Any]) -> float:
    """Largest entry of M + M^* (zero for anti-Hermitian matrices)."""
    return float(np.max(np.abs(M + np.conj(np.swapaxes(M, -1, -2))), initial=0.0))


def act(M: NDArray[Any], v: NDArray[Any]) -> NDArray[Any]:
    """Apply a field of matrices to a field of vectors sitewise."""
    return np.einsum("...ij,...j->...i", M, v)


def outer(v: NDArray[Any]) -> NDArray[Any]:
    """Sitewise v v^* in the standard Hermitian metric."""
    return np.einsum("...i,...j->...ij", v, np.conj(v))


def commutator(X: NDArray[Any], Y: NDArray[Any]) -> NDArray[Any]:
    return X @ Y - Y @ X


def background_connection(spec: BundleSpec, geom: LatticeGeometry) -> NDArray[Any]:
    """A_bg with A_bg,y1 = -(2 pi i d x1 / L^2) I and all other components zero."""
    out = np.zeros((geom.dim, *geom.grid_shape, spec.n, spec.n), dtype=np.complex128)
    if spec.d != 0:
        coefficient = -2j * np.pi * spec.d / geom.L**2
        x = np.broadcast_to(geom.coordinate(0), geom.grid_shape)
        out[1] = coefficient * x[..., None, None] * np.eye(spec.n)
    return out


def background_curvature(spec: BundleSpec, geom: LatticeGeometry) -> FormField:
    """Constant curvature F_bg,x1y1 = -(2 pi i d / L^2) I of the background."""
    F = FormField.zeros(geom, 2, (spec.n, spec.n))
    if spec.d != 0:
        F.data[0] = (-2j * np.pi * spec.d / geom.L**2) * np.eye(spec.n)
    return F


def total_connection(state: FieldState) -> NDArray[Any]:
    return background_connection(state.spec, state.geom) + state.A.data


def background_state(spec: BundleSpec, geom: LatticeGeometry) -> FieldState:
    """Background connection with zero perturbation and zero section."""
    validate_topology(spec, geom)
    return FieldState(
        spec=spec,
        geom=geom,
        A=FormField.zeros(geom, 1, (spec.n, spec.n)),
        phi=FormField.zeros(geom, 0, (spec.n,)),
    )


def constant_state(
    spec: BundleSpec, geom: LatticeGeometry, value: complex | list[complex]
) -> FieldState:
    """Zero perturbation with a spatially constant section (trivial bundle)."""
    state = background_state(spec, geom)
    vector = np.broadcast_to(np.asarray(value, dtype=np.complex128), (spec.n,))
    if spec.d != 0 and np.any(vector != 0):
        raise TopologyError("a nonzero constant section needs a trivial bundle")
    phi = np.broadcast_to(vector, (1, *geom.grid_shape, spec.n)).copy()
    return state.replace(phi=FormField(0, phi, geom))


# ──────────────────────────────────────────────────────────────────────────────
# Covariant calculus
# ──────────────────────────────────────────────────────────────────────────────


def covariant_d(state: FieldState) -> FormField:
    """Forward covariant derivative d_A phi, located at link midpoints."""
    spec, geom = state.spec, state.geom
    h = geom.h_spacing
    phi = state.phi_values
    A = total_connection(state)
    out = np.empty((geom.dim, *phi.shape), dtype=np.complex128)
    for mu in range(geom.dim):
        ahead = transport(spec, geom, phi, mu, 1)
        out[mu] = (ahead - phi) / h + 0.5 * act(A[mu], phi + ahead)
    return FormField(1, out, geom)


def covariant_d_adjoint(state: FieldState, psi: FormField) -> FormField:
    """Exact adjoint of ``covariant_d`` applied to a section-valued 1-form."""
    spec, geom = state.spec, state.geom
    h = geom.h_spacing
    A = total_connection(state)
    out = np.zeros_like(state.phi_values)
    for mu in range(geom.dim):
        p = psi.data[mu]
        Xp = act(0.5 * h * A[mu], p)
        out += (transport(spec, geom, p - Xp, mu, -1) - (p + Xp)) / h
    return FormField(0, out[np.newaxis], geom)


def covariant_laplacian(state: FieldState) -> FormField:
    """d_A^* d_A phi."""
    return covariant_d_adjoint(state, covariant_d(state))


def centered_covariant_d(state: FieldState, phi: FormField | None = None) -> FormField:
    """Site-centred covariant derivative, the mean of the two adjacent links."""
    spec, geom = state.spec, state.geom
    h = geom.h_spacing
    values = state.phi_values if phi is None else phi.data[0]
    A = total_connection(state)
    out = np.empty((geom.dim, *values.shape), dtype=np.complex128)
    for mu in range(geom.dim):
        X = 0.5 * h * A[mu]
        X_behind = shift(X, mu, -1)
        ahead = transport(spec, geom, values, mu, 1)
        behind = transport(spec, geom, values, mu, -1)
        forward = ahead + act(X, ahead) - values + act(X, values)
        backward = values + act(X_behind, values) - behind + act(X_behind, behind)
        out[mu] = (forward + backward) / (2.0 * h)
    return FormField(1, out, geom)


def centered_covariant_d_adjoint(state: FieldState, psi: FormField) -> FormField:
    """Exact adjoint of ``centered_covariant_d``."""
    spec, geom = state.spec, state.geom
    h = geom.h_spacing
    A = total_connection(state)
    out = np.zeros_like(state.phi_values)
    for mu in range(geom.dim):
        p = psi.data[mu]
        Xp = act(0.5 * h * A[mu], p)
        Xbp = act(shift(0.5 * h * A[mu], mu, -1), p)
        out += (
            transport(spec, geom, p - Xp, mu, -1)
            - (p + Xp)
            + (p - Xbp)
            - transport(spec, geom, p + Xbp, mu, 1)
        ) / (2.0 * h)
    return FormField(0, out[np.newaxis], geom)


def dolbeault_split(state: FieldState) -> tuple[FormField, FormField]:
    """The (1,0) and (0,1) parts (del_A phi, dbar_A phi) of d_A phi at sites."""
    centred = centered_covariant_d(state)
    return type_component(centred, 1), type_component(centred, 0)


def dbar(state: FieldState, phi: FormField | None = None) -> FormField:
    """dbar_A of a section (the state's own section by default)."""
    return type_component(centered_covariant_d(state, phi), 0)


def dbar_adjoint(state: FieldState, alpha: FormField) -> FormField:
    """Exact adjoint of ``dbar`` on section-valued 1-forms."""
    return centered_covariant_d_adjoint(state, type_component(alpha, 0))


def higgs_current(state: FieldState) -> FormField:
    """J_mu = anti-Hermitian part of D_mu phi (x) phi_bar_mu^* at link midpoints."""
    spec, geom = state.spec, state.geom
    phi = state.phi_values
    D = covariant_d(state).data
    out = np.empty((geom.dim, *geom.grid_shape, spec.n, spec.n), dtype=np.complex128)
    for mu in range(geom.dim):
        mean = 0.5 * (phi + transport(spec, geom, phi, mu, 1))
        out[mu] = antihermitian_part(
            np.einsum("...i,...j->...ij", D[mu], np.conj(mean))
        )
    return FormField(1, out, geom)


def _link_mean(a: NDArray[Any], mu: int, nu: int) -> NDArray[Any]:
    """A_mu averaged over the two mu-links of the (mu, nu) plaquette."""
    return 0.5 * (a[mu] + shift(a[mu], nu, 1))


def curvature(state: FieldState) -> FormField:
    """F = F_bg + d_plus a + [A_mu, A_nu] with plaquette-averaged links."""
    F = d_plus(state.A).data.astype(np.complex128)
    if state.spec.n > 1:
        a = state.A.data
        for i, (mu, nu) in enumerate(components(state.geom.dim, 2)):
            F[i] += commutator(_link_mean(a, mu, nu), _link_mean(a, nu, mu))
    return FormField(2, F, state.geom) + background_curvature(state.spec, state.geom)


def curvature_variation(state: FieldState, b: FormField) -> FormField:
    """Derivative of ``curvature`` in the direction b of the perturbation."""
    F = d_plus(b).data.astype(np.complex128)
    if state.spec.n > 1:
        a = state.A.data
        for i, (mu, nu) in enumerate(components(state.geom.dim, 2)):
            F[i] += commutator(_link_mean(b.data, mu, nu), _link_mean(a, nu, mu))
            F[i] += commutator(_link_mean(a, mu, nu), _link_mean(b.data, nu, mu))
    return FormField(2, F, state.geom)


def covariant_codifferential(state: FieldState, G: FormField) -> FormField:
    """d_A^* G: exact adjoint of ``curvature_variation`` at the given state."""
    out = codifferential(G).data.astype(np.complex128)
    if state.spec.n > 1:
        a = state.A.data
        for i, (mu, nu) in enumerate(components(state.geom.dim, 2)):
            K = -commutator(G.data[i], _link_mean(a, nu, mu))
            out[mu] += 0.5 * (K + shift(K, nu, -1))
            K = commutator(G.data[i], _link_mean(a, mu, nu))
            out[nu] += 0.5 * (K + shift(K, mu, -1))
    return FormField(1, out, state.geom)


def site_curvature(state: FieldState) -> FormField:
    """Curvature averaged from the four plaquettes around each site."""
    return center_two_form(curvature(state))


def flux(state: FieldState) -> float:
    """(i / 2 pi) sum tr Lambda F h^{2m}, which equals the degree."""
    F = lambda_contract(curvature(state)).data
    total = np.trace(F, axis1=-2, axis2=-1).sum() * state.geom.cell_volume
    return float((1j * total / (2.0 * np.pi)).real)


def adjoint_link_derivatives(state: FieldState, Y: NDArray[Any]) -> NDArray[Any]:
    """Covariant derivatives of an End E valued site field at link midpoints.

    Returns an array indexed ``[link, direction, *grid, n, n]``. The
    background is central, so only the perturbation enters the brackets.
    """
    geom = state.geom
    h = geom.h_spacing
    a = state.A.data
    nonabelian = state.spec.n > 1
    out = np.empty((geom.dim, geom.dim, *Y.shape), dtype=np.complex128)
    centred = []
    for rho in range(geom.dim):
        c = centered_difference(Y, rho, h)
        if nonabelian:
            c = c + commutator(0.5 * (a[rho] + shift(a[rho], rho, -1)), Y)
        centred.append(c)
    for mu in range(geom.dim):
        for rho in range(geom.dim):
            if rho == mu:
                val = forward_difference(Y, mu, h)
                if nonabelian:
                    val = val + commutator(a[mu], 0.5 * (Y + shift(Y, mu, 1)))
            else:
                val = 0.5 * (centred[rho] + shift(centred[rho], mu, 1))
            out[mu, rho] = val
    return out


def dbar_minus_del(state: FieldState, Y: NDArray[Any]) -> FormField:
    """(dbar_A - del_A) Y for an End E valued site field, at link midpoints."""
    geom = state.geom
    M = antiholomorphic_projector(geom.m) - holomorphic_projector(geom.m)
    G = adjoint_link_derivatives(state, Y)
    out = np.einsum("rm,mr...->m...", M, G)
    return FormField(1, out, geom)


# ──────────────────────────────────────────────────────────────────────────────
# Gauge action
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class GaugeTransform:
    """A complex gauge transformation g, pointwise invertible."""

    g: FormField  # 0-form with n x n values

    @property
    def values(self) -> NDArray[np.complex128]:
        return self.g.data[0]

    @property
    def unitary(self) -> bool:
        v = self.values
        gram = np.conj(np.swapaxes(v, -1, -2)) @ v
        return bool(np.max(np.abs(gram - np.eye(v.shape[-1]))) <= UNITARY_TOLERANCE)

    @classmethod
    def constant(cls, geom: LatticeGeometry, matrix: NDArray[Any]) -> GaugeTransform:
        matrix = np.asarray(matrix, dtype=np.complex128)
        data = np.broadcast_to(matrix, (1, *geom.grid_shape, *matrix.shape)).copy()
        return cls(FormField(0, data, geom))

    @classmethod
    def from_exponent(
        cls,
        geom: LatticeGeometry,
        u: NDArray[np.float64] | None = None,
        theta: NDArray[np.float64] | None = None,
    ) -> GaugeTransform:
        """Rank-1 transformation g = exp(u + i theta) from real site fields."""
        exponent = np.zeros(geom.grid_shape, dtype=np.complex128)
        if u is not None:
            exponent = exponent + u
        if theta is not None:
            exponent = exponent + 1j * theta
        return cls(FormField(0, np.exp(exponent)[np.newaxis, ..., None, None], geom))


def _unitary_action(state: FieldState, g: NDArray[Any]) -> FieldState:
    spec, geom = state.spec, state.geom
    h = geom.h_spacing
    identity = np.eye(spec.n)
    A = total_connection(state)
    background = background_connection(spec, geom)
    new = np.empty_like(state.A.data)
    g_star = np.conj(np.swapaxes(g, -1, -2))
    for mu in range(geom.dim):
        X = 0.5 * h * A[mu]
        link = np.linalg.solve(identity - X, identity + X)
        link = g @ link @ shift(g_star, mu, 1)
        X_new = np.linalg.solve(link + identity, link - identity)
        new[mu] = (2.0 / h) * antihermitian_part(X_new) - background[mu]
    phi = act(g, state.phi_values)
    return state.replace(
        A=FormField(1, new, geom), phi=FormField(0, phi[np.newaxis], geom)
    )


def hermitian_shift(geom: LatticeGeometry, u: NDArray[np.float64]) -> FormField:
    """The scalar 1-form i J du added to A by g = exp(u), at link midpoints."""
    h = geom.h_spacing
    b = np.zeros((geom.dim, *geom.grid_shape), dtype=np.complex128)
    for x, y in kahler_pairs(geom.m):
        b[x] = -1j * link_derivative(u, x, y, h)
        b[y] = 1j * link_derivative(u, y, x, h)
    return FormField(1, b, geom)


def _hermitian_action(state: FieldState, u: NDArray[np.float64]) -> FieldState:
    """Rank-1 action of g = exp(u): a -> a + i J du, phi -> exp(u) phi."""
    geom = state.geom
    a = state.A.data + hermitian_shift(geom, u).data[..., None, None]
    phi = np.exp(u)[..., None] * state.phi_values
    return state.replace(A=FormField(1, a, geom), phi=FormField(0, phi[np.newaxis], geom))


def gauge_transform(state: FieldState, gauge: GaugeTransform) -> FieldState:
    """Act on a pair by a complex gauge transformation.

    Unitary transformations conjugate the Cayley links exactly. A
    non-unitary rank-1 g = exp(u + i theta) first applies exp(u), which moves
    the (0,1) part of A by -dbar u and the (1,0) part by +del u, then the
    unitary factor.

    Args:
        state: Pair to transform
        gauge: Transformation on the same lattice

    Returns:
        The transformed pair
    """
    g = gauge.values
    det = np.linalg.det(g)
    if not np.all(np.isfinite(det)) or np.min(np.abs(det)) <= 1e-300:
        raise GaugeError("gauge transformation is singular at some site")
    if gauge.unitary:
        return _unitary_action(state, g)
    if state.spec.n != 1:
        raise GaugeError("non-unitary gauge transformations are supported for rank 1")
    modulus = np.abs(g[..., 0, 0])
    state = _hermitian_action(state, np.log(modulus))
    return _unitary_action(state, g / modulus[..., None, None])


# ──────────────────────────────────────────────────────────────────────────────
# Initial data
# ──────────────────────────────────────────────────────────────────────────────


def theta_tail_bound(d: int, truncation: int) -> float:
    """Upper bound on the terms of the theta series left out by truncation."""
    decay = math.exp(-math.pi * abs(d) * truncation**2)
    return 2.0 * decay / (1.0 - math.exp(-math.pi * abs(d) * (2 * truncation + 1)))


def theta_section(
    spec: BundleSpec, geom: LatticeGeometry, truncation: int = 5
) -> FormField:
    """Holomorphic section of the degree-d line bundle, normalized to sup 1.

    phi(x, y) = sum_{|j| <= J} exp(-(pi d / L^2)(x - jL)^2 + 2 pi i j d y / L)
    satisfies the twist phi(x + L, y) = exp(2 pi i d y / L) phi(x, y) and
    vanishes at d points spaced L/d apart in y.
    """
    if spec.n != 1 or spec.d < 1 or geom.m != 1:
        raise TopologyError("theta sections need n = 1, d >= 1 and m = 1")
    tail = theta_tail_bound(spec.d, truncation)
    if tail > 1e-12:
        raise SeriesTruncationError(
            f"theta series tail {tail:.2e} exceeds 1e-12; raise the truncation"
        )
    d, L = spec.d, geom.L
    x = geom.coordinate(0)
    y = geom.coordinate(1)
    phi = np.zeros(geom.grid_shape, dtype=np.complex128)
    for j in range(-truncation, truncation + 1):
        phi += np.exp(-(np.pi * d / L**2) * (x - j * L) ** 2 + 2j * np.pi * j * d * y / L)
    phi /= np.max(np.abs(phi))
    return FormField(0, phi[np.newaxis, ..., np.newaxis], geom)


def theta_state(
    spec: BundleSpec, geom: LatticeGeometry, scale: float = 1.0, truncation: int = 5
) -> FieldState:
    """Background connection with a scaled theta section."""
    state = background_state(spec, geom)
    return state.replace(phi=scale * theta_section(spec, geom, truncation))


def winding_numbers(state: FieldState) -> NDArray[np.int64]:
    """Winding of the section's phase around every x1-y1 plaquette."""
    if state.geom.m != 1 or state.spec.n != 1:
        raise TopologyError("winding numbers are defined for line bundles with m = 1")
    spec, geom = state.spec, state.geom
    p00 = state.phi_values[..., 0]
    p10 = transport(spec, geom, p00, 0, 1)
    p11 = transport(spec, geom, p10, 1, 1)
    p01 = transport(spec, geom, p00, 1, 1)
    total = (
        np.angle(p10 * np.conj(p00))
        + np.angle(p11 * np.conj(p10))
        + np.angle(p01 * np.conj(p11))
        + np.angle(p00 * np.conj(p01))
    )
    return np.rint(total / (2.0 * np.pi)).astype(np.int64)


def random_state(
    spec: BundleSpec,
    geom: LatticeGeometry,
    seed: int,
    band_limit: int,
    amplitude: float = 1.0,
) -> FieldState:
    """Deterministic smooth band-limited pair for property tests.

    Each A_mu is sampled at its link midpoint. For d != 0 the section is a
    smooth periodic factor times the theta section of the bundle.
    """
    validate_topology(spec, geom)
    rng = np.random.default_rng(seed)
    n = spec.n
    a = np.empty((geom.dim, *geom.grid_shape, n, n), dtype=np.complex128)
    for mu in range(geom.dim):
        offsets = tuple(0.5 if axis == mu else 0.0 for axis in range(geom.dim))
        M = band_limited_field(geom, rng, band_limit, (n, n), offsets)
        a[mu] = amplitude * antihermitian_part(M)
    phi = amplitude * band_limited_field(geom, rng, band_limit, (n,))
    if spec.d != 0:
        theta = theta_section(replace(spec, d=abs(spec.d)), geom).data[0]
        phi = phi * (theta if spec.d > 0 else np.conj(theta))
    return FieldState(
        spec=spec,
        geom=geom,
        A=FormField(1, a, geom),
        phi=FormField(0, phi[np.newaxis], geom),
    )
