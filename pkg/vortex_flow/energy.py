"""Yang-Mills-Higgs energy, moment map and the energy identity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .bundle import (
    BundleSpec,
    FieldState,
    covariant_d,
    curvature,
    dbar,
    outer,
    site_curvature,
)
from .lattice import FormField, LatticeGeometry, inner, lambda_contract, type_decompose
from .types import ParameterError, TopologicalConstants, TopologyError


@dataclass(frozen=True)
class EnergyReport:
    """Decomposed energies of a pair.

    ``ymh`` fills the first four fields; ``energy_identity`` fills all of them.
    """

    ymh_total: float
    term_F: float
    term_dphi: float
    term_quartic: float
    moment_sq: float | None = None
    term_F02: float | None = None
    term_dbar: float | None = None
    topo_const: float | None = None
    identity_residual: float | None = None

    @property
    def relative_residual(self) -> float | None:
        if self.identity_residual is None:
            return None
        if self.ymh_total == 0.0:
            return abs(self.identity_residual)
        return abs(self.identity_residual) / abs(self.ymh_total)

    def as_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["relative_residual"] = self.relative_residual
        return data


def check_tau(tau: float) -> None:
    if not (math.isfinite(tau) and tau > 0):
        raise ParameterError(f"tau must be a positive real number, got {tau}")


def quartic_density(state: FieldState, tau: float) -> NDArray[np.complex128]:
    """phi phi^* - tau I at every site."""
    return outer(state.phi_values) - tau * np.eye(state.spec.n)


def moment_map(state: FieldState, tau: float) -> FormField:
    """Psi_tau = Lambda F - (i/2)(phi phi^* - tau I), anti-Hermitian at sites."""
    check_tau(tau)
    lambda_F = lambda_contract(site_curvature(state)).data[0]
    psi = lambda_F - 0.5j * quartic_density(state, tau)
    return FormField(0, psi[np.newaxis], state.geom)


def vortex_functional(state: FieldState, tau: float) -> float:
    """Squared L^2 norm of the moment map."""
    psi = moment_map(state, tau)
    return inner(psi, psi)


def ymh(state: FieldState, tau: float) -> EnergyReport:
    """||F||^2 + ||d_A phi||^2 + (1/4)||phi phi^* - tau I||^2 by rectangle quadrature."""
    check_tau(tau)
    F = curvature(state)
    D = covariant_d(state)
    term_F = inner(F, F)
    term_dphi = inner(D, D)
    quartic = quartic_density(state, tau)
    term_quartic = 0.25 * state.geom.cell_volume * float(np.sum(np.abs(quartic) ** 2))
    return EnergyReport(
        ymh_total=term_F + term_dphi + term_quartic,
        term_F=term_F,
        term_dphi=term_dphi,
        term_quartic=term_quartic,
    )


def ymh_total(state: FieldState, tau: float) -> float:
    return ymh(state, tau).ymh_total


def topological_constants(
    spec: BundleSpec, geom: LatticeGeometry, tau: float
) -> TopologicalConstants:
    """C_1, Ch_2 and 2 pi tau C_1 - 8 pi^2 Ch_2, evaluated from (d, L)."""
    check_tau(tau)
    if geom.m == 2 and spec.d != 0:
        raise TopologyError("Chern-Weil numbers for m = 2 need a trivial bundle")
    c1 = float(spec.d) if geom.m == 1 else 0.0
    ch2 = 0.0
    return TopologicalConstants(
        c1=c1, ch2=ch2, topo_const=2.0 * math.pi * tau * c1 - 8.0 * math.pi**2 * ch2
    )


def energy_identity(state: FieldState, tau: float) -> EnergyReport:
    """Full decomposition ymh = ||Psi||^2 + 4||F^{0,2}||^2 + 2||dbar phi||^2 + const."""
    report = ymh(state, tau)
    _, _, F02 = type_decompose(site_curvature(state))
    dbar_phi = dbar(state)
    moment_sq = vortex_functional(state, tau)
    term_F02 = 4.0 * inner(F02, F02)
    term_dbar = 2.0 * inner(dbar_phi, dbar_phi)
    topo = topological_constants(state.spec, state.geom, tau)["topo_const"]
    residual = report.ymh_total - (moment_sq + term_F02 + term_dbar + topo)
    return replace(
        report,
        moment_sq=moment_sq,
        term_F02=term_F02,
        term_dbar=term_dbar,
        topo_const=topo,
        identity_residual=residual,
    )


def energy_identity_residual(state: FieldState, tau: float) -> tuple[float, float]:
    """Absolute and relative residual of the energy identity."""
    report = energy_identity(state, tau)
    assert report.identity_residual is not None
    return report.identity_residual, report.relative_residual or 0.0
