"""Discrete flat-Kähler geometry on a periodic lattice.

Forms are stored collocated at sites. A p-form field holds an array of shape
``(C(2m, p), N, ..., N, *V)`` where the leading axis enumerates strictly
increasing direction tuples, the next ``2m`` axes are the grid and ``V`` is the
value shape (``()`` for scalars, ``(n,)`` for sections, ``(n, n)`` for
endomorphisms). Real axes are ordered ``x1, y1, x2, y2``.

Conventions (see ``conventions.py``): dz_j = dx_j + i dy_j, the Kähler form is
omega = sum_j dx_j ^ dy_j and all quadrature is the rectangle rule.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cache
from typing import Any, Callable

import numpy as np
from numpy.typing import NDArray

from .types import LatticeError, ParameterError

Difference = Callable[[NDArray[Any], int, float], NDArray[Any]]


# ──────────────────────────────────────────────────────────────────────────────
# Geometry
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class LatticeGeometry:
    """Flat torus (R/LZ)^{2m} sampled with N sites per real axis."""

    m: int
    L: float
    N: int

    @property
    def dim(self) -> int:
        """Number of real axes."""
        return 2 * self.m

    @property
    def h_spacing(self) -> float:
        return self.L / self.N

    @property
    def vol(self) -> float:
        return self.L**self.dim

    @property
    def cell_volume(self) -> float:
        """Quadrature weight of a single site."""
        return self.h_spacing**self.dim

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    def coordinate(self, axis: int, offset: float = 0.0) -> NDArray[np.float64]:
        """Coordinate along ``axis`` at sites shifted by ``offset`` spacings.

        The result broadcasts against the grid.
        """
        shape = [1] * self.dim
        shape[axis] = self.N
        return ((np.arange(self.N) + offset) * self.h_spacing).reshape(shape)


def build_torus(m: int, L: float, N: int) -> LatticeGeometry:
    """Create a lattice geometry after checking its preconditions.

    Args:
        m: Complex dimension (1 or 2)
        L: Side length of every real axis
        N: Sites per real axis (even, at least 4)

    Returns:
        The validated geometry
    """
    if m not in (1, 2):
        raise LatticeError(f"complex dimension must be 1 or 2, got {m}")
    if N < 4 or N % 2 != 0:
        raise LatticeError(f"N must be even and at least 4, got {N}")
    if not (math.isfinite(L) and L > 0):
        raise LatticeError(f"side length must be positive, got {L}")
    return LatticeGeometry(m=int(m), L=float(L), N=int(N))


@cache
def components(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """Strictly increasing direction tuples indexing the components of a form."""
    return tuple(itertools.combinations(range(dim), degree))


@cache
def _component_index(dim: int, degree: int) -> dict[tuple[int, ...], int]:
    return {comp: i for i, comp in enumerate(components(dim, degree))}


def kahler_pairs(m: int) -> list[tuple[int, int]]:
    """Axis pairs (x_j, y_j) spanning the complex lines."""
    return [(2 * j, 2 * j + 1) for j in range(m)]


# ──────────────────────────────────────────────────────────────────────────────
# Form fields
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class FormField:
    """A p-form with values in scalars, C^n or n x n matrices."""

    degree: int
    data: NDArray[Any]
    geom: LatticeGeometry

    def __post_init__(self) -> None:
        count = len(components(self.geom.dim, self.degree))
        grid = self.data.shape[1 : 1 + self.geom.dim]
        if self.data.shape[0] != count or grid != self.geom.grid_shape:
            raise LatticeError(
                f"array of shape {self.data.shape} is not a {self.degree}-form "
                f"on a {self.geom.grid_shape} grid"
            )

    @classmethod
    def zeros(
        cls,
        geom: LatticeGeometry,
        degree: int,
        value_shape: tuple[int, ...] = (),
        dtype: Any = np.complex128,
    ) -> FormField:
        count = len(components(geom.dim, degree))
        data = np.zeros((count, *geom.grid_shape, *value_shape), dtype=dtype)
        return cls(degree, data, geom)

    @property
    def value_shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape[1 + self.geom.dim :])

    @property
    def components(self) -> tuple[tuple[int, ...], ...]:
        return components(self.geom.dim, self.degree)

    def component(self, index: tuple[int, ...]) -> NDArray[Any]:
        """Array of the component with the given increasing direction tuple."""
        return self.data[_component_index(self.geom.dim, self.degree)[index]]

    def with_data(self, data: NDArray[Any]) -> FormField:
        return FormField(self.degree, data, self.geom)

    def _check_compatible(self, other: FormField) -> None:
        if self.degree != other.degree or self.data.shape != other.data.shape:
            raise LatticeError(
                f"incompatible forms: degree {self.degree} {self.data.shape} "
                f"vs degree {other.degree} {other.data.shape}"
            )

    def __add__(self, other: FormField) -> FormField:
        self._check_compatible(other)
        return self.with_data(self.data + other.data)

    def __sub__(self, other: FormField) -> FormField:
        self._check_compatible(other)
        return self.with_data(self.data - other.data)

    def __neg__(self) -> FormField:
        return self.with_data(-self.data)

    def __mul__(self, scalar: complex) -> FormField:
        return self.with_data(scalar * self.data)

    __rmul__ = __mul__


# ──────────────────────────────────────────────────────────────────────────────
# Finite differences
# ──────────────────────────────────────────────────────────────────────────────


def shift(arr: NDArray[Any], axis: int, step: int = 1) -> NDArray[Any]:
    """Periodic read ``result[x] = arr[x + step * e_axis]`` of a grid-leading array."""
    return np.roll(arr, -step, axis=axis)


def forward_difference(arr: NDArray[Any], axis: int, h: float) -> NDArray[Any]:
    return (shift(arr, axis, 1) - arr) / h


def forward_difference_adjoint(arr: NDArray[Any], axis: int, h: float) -> NDArray[Any]:
    return (shift(arr, axis, -1) - arr) / h


def centered_difference(arr: NDArray[Any], axis: int, h: float) -> NDArray[Any]:
    return (shift(arr, axis, 1) - shift(arr, axis, -1)) / (2.0 * h)


def centered_difference_adjoint(
    arr: NDArray[Any], axis: int, h: float
) -> NDArray[Any]:
    return -centered_difference(arr, axis, h)


def link_derivative(
    arr: NDArray[Any], link: int, direction: int, h: float
) -> NDArray[Any]:
    """Derivative along ``direction`` at the midpoint of each ``link``-edge.

    Edges along ``direction`` use the forward difference; transverse
    derivatives average the centred differences at both ends of the edge.
    """
    if direction == link:
        return forward_difference(arr, link, h)
    centred = centered_difference(arr, direction, h)
    return 0.5 * (centred + shift(centred, link, 1))


def _exterior(f: FormField, diff: Difference) -> FormField:
    dim = f.geom.dim
    if f.degree >= dim:
        raise LatticeError(f"degree overflow: d of a {f.degree}-form in {dim} axes")
    source = _component_index(dim, f.degree)
    target = components(dim, f.degree + 1)
    h = f.geom.h_spacing
    dtype = np.result_type(f.data, np.float64)
    out = np.zeros((len(target), *f.data.shape[1:]), dtype=dtype)
    for j, comp in enumerate(target):
        for k, mu in enumerate(comp):
            rest = comp[:k] + comp[k + 1 :]
            out[j] += (-1) ** k * diff(f.data[source[rest]], mu, h)
    return FormField(f.degree + 1, out, f.geom)


def _coexterior(g: FormField, diff_adjoint: Difference) -> FormField:
    dim = g.geom.dim
    if g.degree < 1:
        raise LatticeError("codifferential of a 0-form")
    target = _component_index(dim, g.degree - 1)
    h = g.geom.h_spacing
    dtype = np.result_type(g.data, np.float64)
    out = np.zeros((len(target), *g.data.shape[1:]), dtype=dtype)
    for j, comp in enumerate(g.components):
        for k, mu in enumerate(comp):
            rest = comp[:k] + comp[k + 1 :]
            out[target[rest]] += (-1) ** k * diff_adjoint(g.data[j], mu, h)
    return FormField(g.degree - 1, out, g.geom)


def d_plus(f: FormField) -> FormField:
    """Forward-difference exterior derivative."""
    return _exterior(f, forward_difference)


def codifferential(g: FormField) -> FormField:
    """Exact adjoint of ``d_plus`` under ``inner`` (backward differences)."""
    return _coexterior(g, forward_difference_adjoint)


def d_center(f: FormField) -> FormField:
    """Centred-difference exterior derivative (site-centred calculus)."""
    return _exterior(f, centered_difference)


def codifferential_center(g: FormField) -> FormField:
    """Exact adjoint of ``d_center``."""
    return _coexterior(g, centered_difference_adjoint)


def laplacian(u: FormField) -> FormField:
    """Non-positive 5-point Laplacian ``-codifferential(d_plus(u))`` on 0-forms."""
    return -codifferential(d_plus(u))


# ──────────────────────────────────────────────────────────────────────────────
# Kähler structure
# ──────────────────────────────────────────────────────────────────────────────


def lambda_contract(F: FormField) -> FormField:
    """Contraction with omega: (Lambda F)(x) = sum_j F_{x_j y_j}(x)."""
    if F.degree != 2:
        raise LatticeError(f"Lambda expects a 2-form, got degree {F.degree}")
    out = sum(F.component(pair) for pair in kahler_pairs(F.geom.m))
    return FormField(0, np.asarray(out)[np.newaxis], F.geom)


def wedge_omega(f: FormField) -> FormField:
    """Multiply a 0-form by omega (the adjoint of ``lambda_contract``)."""
    if f.degree != 0:
        raise LatticeError(f"wedge_omega expects a 0-form, got degree {f.degree}")
    out = FormField.zeros(f.geom, 2, f.value_shape, np.result_type(f.data))
    index = _component_index(f.geom.dim, 2)
    for pair in kahler_pairs(f.geom.m):
        out.data[index[pair]] = f.data[0]
    return out


@cache
def holomorphic_projector(m: int) -> NDArray[np.complex128]:
    """Matrix R with alpha^{1,0}_nu = sum_rho R[rho, nu] alpha_rho."""
    R = np.zeros((2 * m, 2 * m), dtype=np.complex128)
    for x, y in kahler_pairs(m):
        R[x, x] = R[y, y] = 0.5
        R[x, y] = 0.5j
        R[y, x] = -0.5j
    R.setflags(write=False)
    return R


@cache
def antiholomorphic_projector(m: int) -> NDArray[np.complex128]:
    Rbar = np.eye(2 * m, dtype=np.complex128) - holomorphic_projector(m)
    Rbar.setflags(write=False)
    return Rbar


def _full_tensor(F: FormField) -> NDArray[Any]:
    dim = F.geom.dim
    full = np.zeros((dim, dim, *F.data.shape[1:]), dtype=np.complex128)
    for i, (mu, nu) in enumerate(F.components):
        full[mu, nu] = F.data[i]
        full[nu, mu] = -F.data[i]
    return full


def type_component(f: FormField, holomorphic_count: int) -> FormField:
    """Part of ``f`` with exactly ``holomorphic_count`` dz factors.

    The projectors for all counts sum to the identity and are mutually
    orthogonal, so they partition every form exactly.
    """
    p, m = f.degree, f.geom.m
    if holomorphic_count < 0 or holomorphic_count > p:
        return FormField.zeros(f.geom, p, f.value_shape)
    if p == 0:
        return f.with_data(f.data.astype(np.complex128))
    R, Rbar = holomorphic_projector(m), antiholomorphic_projector(m)
    if p == 1:
        P = R if holomorphic_count == 1 else Rbar
        return f.with_data(np.einsum("rn,r...->n...", P, f.data))
    if p == 2:
        full = _full_tensor(f)
        slots = {2: [(R, R)], 0: [(Rbar, Rbar)], 1: [(R, Rbar), (Rbar, R)]}
        projected = sum(
            np.einsum("ra,sb,rs...->ab...", P1, P2, full)
            for P1, P2 in slots[holomorphic_count]
        )
        data = np.stack([projected[mu, nu] for mu, nu in f.components])
        return f.with_data(data)
    raise LatticeError(f"type projection of degree {p} forms is not supported")


def type_decompose(F: FormField) -> tuple[FormField, FormField, FormField]:
    """Split a 2-form into its (2,0), (1,1) and (0,2) parts."""
    if F.degree != 2:
        raise LatticeError(f"type_decompose expects a 2-form, got degree {F.degree}")
    F20 = type_component(F, 2)
    F02 = type_component(F, 0)
    F11 = F.with_data(F.data - F20.data - F02.data)
    return F20, F11, F02


def dolbeault(f: FormField, holomorphic: bool) -> FormField:
    """Flat centred ``del`` (holomorphic=True) or ``dbar`` of a form."""
    out: FormField | None = None
    for r in range(f.degree + 1):
        d_piece = d_center(type_component(f, r))
        piece = type_component(d_piece, r + 1 if holomorphic else r)
        out = piece if out is None else out + piece
    assert out is not None
    return out


def dolbeault_adjoint(g: FormField, holomorphic: bool) -> FormField:
    """Exact adjoint of ``dolbeault`` under ``inner``."""
    out: FormField | None = None
    for s in range(g.degree + 1):
        co = codifferential_center(type_component(g, s))
        piece = type_component(co, s - 1 if holomorphic else s)
        out = piece if out is None else out + piece
    assert out is not None
    return out


def kahler_identity_residual(f: FormField, holomorphic: bool = False) -> float:
    """Relative residual of a flat Kähler identity on ``f``.

    Checks dbar* = i[del, Lambda] (or del* = -i[dbar, Lambda] when
    ``holomorphic``) for 1-forms, and for 2-forms when m = 1.

    Both sides use the site-centred operators, on which the identity holds
    exactly, so the residual sits at rounding level for every N rather than
    shrinking like h^2. The forward split ``d_plus`` / ``codifferential``
    does not satisfy it to second order: its type projection mixes
    components stored on different links, leaving an O(h) mismatch.
    """
    sign = -1j if holomorphic else 1j
    lhs = dolbeault_adjoint(f, holomorphic)
    if f.degree == 1:
        rhs = (-sign) * lambda_contract(dolbeault(f, not holomorphic))
    elif f.degree == 2 and f.geom.m == 1:
        rhs = sign * dolbeault(lambda_contract(f), not holomorphic)
    else:
        raise LatticeError(
            f"Kähler identity check needs degree 1, or degree 2 with m = 1; "
            f"got degree {f.degree}, m = {f.geom.m}"
        )
    scale = norm(f)
    return norm(lhs - rhs) / scale if scale > 0 else norm(lhs - rhs)


# ──────────────────────────────────────────────────────────────────────────────
# Inner products and norms
# ──────────────────────────────────────────────────────────────────────────────


def inner(f: FormField, g: FormField) -> float:
    """Real L^2 inner product h^{2m} sum Re tr(f g^*)."""
    f._check_compatible(g)
    return float(f.geom.cell_volume * np.vdot(g.data, f.data).real)


def norm(f: FormField) -> float:
    return math.sqrt(max(inner(f, f), 0.0))


def pointwise_norm_sq(f: FormField) -> NDArray[np.float64]:
    """Squared norm at each site, summed over components and values."""
    axes = (0, *range(1 + f.geom.dim, f.data.ndim))
    return np.sum(np.abs(f.data) ** 2, axis=axes)


def sup_norm(f: FormField) -> float:
    return float(math.sqrt(np.max(pointwise_norm_sq(f))))


def center_two_form(F: FormField) -> FormField:
    """Average a periodic 2-form over the four plaquettes touching each site."""
    out = np.empty_like(F.data)
    for i, (mu, nu) in enumerate(F.components):
        a = F.data[i]
        b = shift(a, mu, -1)
        out[i] = 0.25 * (a + b + shift(a, nu, -1) + shift(b, nu, -1))
    return F.with_data(out)


# ──────────────────────────────────────────────────────────────────────────────
# Band-limited test data
# ──────────────────────────────────────────────────────────────────────────────


def band_limited_field(
    geom: LatticeGeometry,
    rng: np.random.Generator,
    band_limit: int,
    value_shape: tuple[int, ...] = (),
    offsets: tuple[float, ...] | None = None,
) -> NDArray[np.complex128]:
    """Sample a random trigonometric polynomial at (shifted) sites.

    The coefficients c_k for |k_i| <= band_limit are drawn from ``rng``
    independently of N, so the same generator state describes the same
    continuum field on every grid.

    Args:
        geom: Lattice to sample on
        rng: Source of the Fourier coefficients
        band_limit: Largest wavenumber per axis
        value_shape: Shape of the values at each site
        offsets: Sampling shift along each axis in units of the spacing

    Returns:
        Complex array of shape ``grid_shape + value_shape``
    """
    if band_limit < 0 or band_limit > geom.N // 4:
        raise ParameterError(
            f"band_limit must lie in [0, N/4] = [0, {geom.N // 4}], got {band_limit}"
        )
    dim, N = geom.dim, geom.N
    offsets = offsets or (0.0,) * dim
    modes = 2 * band_limit + 1
    shape = (modes,) * dim + value_shape
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    ks = np.arange(-band_limit, band_limit + 1)
    waves = np.meshgrid(*([ks] * dim), indexing="ij")
    k_sq = sum(w**2 for w in waves)
    weight = (1.0 / (1.0 + np.asarray(k_sq))).reshape(
        (modes,) * dim + (1,) * len(value_shape)
    )
    coeffs = coeffs * weight
    # unit root-mean-square over the torus, independent of N
    entries = math.prod(value_shape)
    coeffs /= math.sqrt(float(np.sum(np.abs(coeffs) ** 2)) / entries)
    phase = np.exp(2j * np.pi * sum(w * o for w, o in zip(waves, offsets)) / N)
    phase = phase.reshape(phase.shape + (1,) * len(value_shape))

    spectrum = np.zeros(geom.grid_shape + value_shape, dtype=np.complex128)
    spectrum[np.ix_(*([ks % N] * dim))] = coeffs * phase
    return np.fft.ifftn(spectrum, axes=tuple(range(dim))) * float(N) ** dim


def random_form(
    geom: LatticeGeometry,
    rng: np.random.Generator,
    degree: int,
    band_limit: int,
    value_shape: tuple[int, ...] = (),
) -> FormField:
    """Smooth complex band-limited form, one independent field per component."""
    data = np.stack(
        [
            band_limited_field(geom, rng, band_limit, value_shape)
            for _ in components(geom.dim, degree)
        ]
    )
    return FormField(degree, data, geom)
