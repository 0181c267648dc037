#!/usr/bin/env python3
"""Test the finite-difference, Kazdan-Warner and closed-form oracles."""

import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from vortex_flow.bundle import BundleSpec, FieldState, background_state, constant_state, theta_state
from vortex_flow.energy import moment_map
from vortex_flow.flow import metric_flow_rhs, reconstructed_pair
from vortex_flow.lattice import LatticeGeometry, build_torus
from vortex_flow.oracle import (
    Coordinate,
    antihermitian_basis,
    constant_data_solution,
    eps_sweep,
    fd_gradient,
    kw_solve,
    plateau_energy,
    random_coordinates,
)
from vortex_flow.types import ConvergenceError, InfeasibleError, ParameterError, TopologyError

STANDARD_L = math.sqrt(4.0 * math.pi)


class TestCoordinates:
    """Test coordinate sampling and the u(n) basis."""

    @pytest.mark.parametrize("n, size", [(1, 1), (2, 4)])
    def test_basis(self, n: int, size: int) -> None:
        """Test that the basis is anti-Hermitian and linearly independent."""
        basis = antihermitian_basis(n)
        stacked = np.array([np.concatenate([b.real.ravel(), b.imag.ravel()]) for b in basis])

        assert len(basis) == size
        for b in basis:
            np.testing.assert_allclose(b + b.conj().T, 0.0)
        assert np.linalg.matrix_rank(stacked) == size

    def test_basis_rank_three(self) -> None:
        """Test that only ranks 1 and 2 are supported."""
        with pytest.raises(TopologyError):
            antihermitian_basis(3)

    def test_sampling(self, random_rank2_pair: FieldState) -> None:
        """Test deterministic sampling alternating between A and phi."""
        first = random_coordinates(random_rank2_pair, 10, seed=4)
        second = random_coordinates(random_rank2_pair, 10, seed=4)

        assert first == second
        assert [c.target for c in first[:4]] == ["A", "phi", "A", "phi"]
        assert all(0 <= c.basis < 4 for c in first if c.target == "A")
        assert all(c.basis in (0, 1) for c in first if c.target == "phi")

    def test_empty_sample(self, random_line_pair: FieldState) -> None:
        """Test that at least one coordinate is required."""
        with pytest.raises(ParameterError):
            random_coordinates(random_line_pair, 0)


class TestFiniteDifferences:
    """Test the gradient oracle."""

    @pytest.mark.parametrize("pair", ["random_line_pair", "random_rank2_pair"])
    def test_analytic_gradient_matches(self, pair: str, request: pytest.FixtureRequest) -> None:
        """Test max relative deviation <= 1e-6 on sampled coordinates."""
        state: FieldState = request.getfixturevalue(pair)
        sample = random_coordinates(state, 20, seed=1)
        check = fd_gradient(state, 1.5, 1e-5, sample)

        assert check.numeric.shape == (20,)
        assert check.max_relative_deviation(floor=state.geom.cell_volume) <= 1e-6

    @pytest.mark.parametrize("eps", [1e-2, 1e-8])
    def test_eps_range(self, eps: float, random_line_pair: FieldState) -> None:
        """Test that step sizes outside [1e-7, 1e-3] are refused."""
        sample = random_coordinates(random_line_pair, 2)
        with pytest.raises(ParameterError):
            fd_gradient(random_line_pair, 1.0, eps, sample)

    def test_empty_sample(self, random_line_pair: FieldState) -> None:
        """Test that an empty coordinate list is refused."""
        with pytest.raises(ParameterError):
            fd_gradient(random_line_pair, 1.0, 1e-5, [])

    def test_vortex_has_zero_gradient(self, curve: LatticeGeometry) -> None:
        """Test near-zero derivatives at phi = sqrt(tau)."""
        state = constant_state(BundleSpec(n=1, d=0), curve, math.sqrt(2.0))
        sample = [Coordinate("phi", (0, 1, 2, 0), 0), Coordinate("A", (1, 3, 3), 0)]
        check = fd_gradient(state, 2.0, 1e-5, sample)

        assert check.scale <= 1e-12
        assert check.max_abs_deviation <= 1e-9

    def test_eps_sweep(self, random_line_pair: FieldState) -> None:
        """Test that the sweep reports one deviation per step size."""
        sample = random_coordinates(random_line_pair, 4)
        sweep = eps_sweep(random_line_pair, 1.0, sample)

        assert [eps for eps, _ in sweep] == [1e-3, 1e-5, 1e-7]
        # truncation error dominates at the largest step
        assert sweep[0][1] > sweep[1][1]


class TestKazdanWarner:
    """Test the stationary metric solver."""

    def test_constant_data(self, curve: LatticeGeometry) -> None:
        """Test u* = log(tau / |phi_0|^2) / 2 for constant data."""
        base = constant_state(BundleSpec(n=1, d=0), curve, 0.5)
        solution = kw_solve(base, 1.0)

        np.testing.assert_allclose(solution.metric.values, math.log(2.0), atol=1e-9)
        assert solution.residual <= 1e-10

    def test_feasible_theta(self) -> None:
        """Test convergence above the threshold and a vanishing moment map."""
        base = theta_state(BundleSpec(n=1, d=1), build_torus(1, STANDARD_L, 16))
        solution = kw_solve(base, 2.0, tol=1e-10)

        assert solution.residual <= 1e-10
        assert solution.residual_history[0] > solution.residual
        assert np.max(np.abs(metric_flow_rhs(solution.metric, 2.0).data)) <= 1e-10

    def test_reconstructed_pair_is_a_vortex(self) -> None:
        """Test that the pair rebuilt from u* has a moment map within 10 tol."""
        base = theta_state(BundleSpec(n=1, d=1), build_torus(1, STANDARD_L, 16))
        solution = kw_solve(base, 2.0, tol=1e-10)
        moment = moment_map(reconstructed_pair(solution.metric), 2.0).data

        assert solution.moment_inf_norm <= 1e-9
        assert np.max(np.abs(moment)) <= 1e-9

    @pytest.mark.parametrize("info, reason", [(5, "stalled after 5"), (-1, "broke down")])
    def test_conjugate_gradient_failure(
        self, info: int, reason: str, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test that a failed linear solve stops Newton with the history so far."""
        base = theta_state(BundleSpec(n=1, d=1), build_torus(1, STANDARD_L, 16))
        monkeypatch.setattr(spla, "cg", lambda operator, rhs, **kwargs: (np.zeros_like(rhs), info))

        with pytest.raises(ConvergenceError, match=reason) as exc:
            kw_solve(base, 2.0)
        assert len(exc.value.residual_history) == 1

    def test_continuation(self) -> None:
        """Test that intermediate tau values lead to the same solution."""
        base = theta_state(BundleSpec(n=1, d=1), build_torus(1, STANDARD_L, 16))
        direct = kw_solve(base, 2.0)
        continued = kw_solve(base, 2.0, continuation=[3.0, 2.5])

        np.testing.assert_allclose(continued.metric.values, direct.metric.values, atol=1e-8)

    def test_below_threshold(self) -> None:
        """Test the Bradlow obstruction at tau = 0.5."""
        base = theta_state(BundleSpec(n=1, d=1), build_torus(1, STANDARD_L, 16))
        with pytest.raises(InfeasibleError) as exc:
            kw_solve(base, 0.5)

        assert exc.value.report["threshold"] == pytest.approx(1.0)
        assert not exc.value.report["feasible"]

    def test_vanishing_section(self, curve: LatticeGeometry) -> None:
        """Test that phi_0 = 0 has no solution."""
        with pytest.raises(InfeasibleError):
            kw_solve(background_state(BundleSpec(n=1, d=1), curve), 2.0)

    def test_rank_two(self, random_rank2_pair: FieldState) -> None:
        """Test that the solver is rank 1 only."""
        with pytest.raises(TopologyError):
            kw_solve(random_rank2_pair, 1.0)


class TestClosedForms:
    """Test closed-form reference values."""

    def test_plateau_energy(self) -> None:
        """Test 4 pi^2 d^2 / L^2 + tau^2 L^2 / 4 at L = 2, d = 1, tau = 1."""
        geom = build_torus(1, 2.0, 8)

        assert plateau_energy(BundleSpec(n=1, d=1), geom, 1.0) == pytest.approx(math.pi**2 + 1.0)

    def test_plateau_needs_line_bundle(self, curve: LatticeGeometry) -> None:
        """Test that the plateau is defined for n = 1 only."""
        with pytest.raises(TopologyError):
            plateau_energy(BundleSpec(n=2, d=0), curve, 1.0)

    def test_constant_data_solution(self) -> None:
        """Test the logistic solution rho' = rho (tau - rho)."""
        t = np.linspace(0.0, 3.0, 7)
        rho = constant_data_solution(0.25, 1.0, t)
        h = 1e-6
        derivative = (
            constant_data_solution(0.25, 1.0, t + h) - constant_data_solution(0.25, 1.0, t - h)
        ) / (2.0 * h)

        assert rho[0] == pytest.approx(0.25)
        np.testing.assert_allclose(derivative, rho * (1.0 - rho), rtol=1e-6)
        assert constant_data_solution(0.25, 1.0, 50.0) == pytest.approx(1.0)
