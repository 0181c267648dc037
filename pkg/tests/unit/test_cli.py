#!/usr/bin/env python3
"""Test the kvf commands end to end on small lattices."""

import json
import math
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from vortex_flow import __version__
from vortex_flow.cli import app, exit_code_for, flow_discrepancy
from vortex_flow.diagnostics import TRACE_COLUMNS, DiagnosticsTrace, TraceRow
from vortex_flow.serialize import read_metric, read_state, read_trace
from vortex_flow.types import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    HolomorphyError,
    InfeasibleError,
    InstabilityError,
    TopologyError,
)

runner = CliRunner()

CONSTANT_RUN = """
tau = 1
geometry.N = 8
bundle.d = 0
init.kind = constant
init.value = 0.5
flow.t_end = 0.05
output.record_every = 1
"""

THETA_BASE = """
geometry.N = 8
bundle.d = 1
init.kind = theta
"""


def _summary(directory: Path) -> dict:
    return json.loads((directory / "summary.json").read_text())


def _trace(values: list[tuple[float, float]]) -> DiagnosticsTrace:
    trace = DiagnosticsTrace()
    for t, ymh in values:
        row = dict.fromkeys(TRACE_COLUMNS, 1.0)
        row.update(t=t, ymh=ymh)
        trace.append(TraceRow(**row))
    return trace


class TestExitCodes:
    """Test the mapping from errors to process exit codes."""

    @pytest.mark.parametrize(
        "error, code",
        [
            (ConfigError("bad", "tau"), 2),
            (TopologyError("rank"), 2),
            (ConvergenceError("slow", [1.0]), 1),
            (DivergenceError("dt underflow"), 3),
            (InstabilityError("ymh", 1.0), 3),
            (HolomorphyError(0.1, 0.05), 2),
            (
                InfeasibleError(
                    "below", {"threshold": 1.0, "feasible": False, "margin": -0.5, "borderline": False}
                ),
                4,
            ),
        ],
    )
    def test_exit_code_for(self, error: Exception, code: int) -> None:
        """Test each error class against its documented exit code."""
        assert exit_code_for(error) == code


class TestApp:
    """Test top-level options."""

    def test_version(self) -> None:
        """Test --version."""
        result = runner.invoke(app, ["--version"])

        assert result.exit_code == 0
        assert __version__ in result.output


class TestRun:
    """Test the run command."""

    def test_malformed_config(self, write_config: Callable[..., Path], tmp_path: Path) -> None:
        """Test that a broken config exits 2 before creating any artifact."""
        path = write_config("geometry.N 8")
        result = runner.invoke(app, ["run", "--config", str(path)])

        assert result.exit_code == 2
        assert not (tmp_path / "out").exists()

    def test_missing_config(self, tmp_path: Path) -> None:
        """Test that an absent config file exits 2."""
        result = runner.invoke(app, ["run", "--config", str(tmp_path / "absent.cfg")])

        assert result.exit_code == 2

    def test_constant_run(self, write_config: Callable[..., Path], tmp_path: Path) -> None:
        """Test the artifacts of a short run on constant data."""
        path = write_config(CONSTANT_RUN)
        result = runner.invoke(app, ["run", "-c", str(path)])
        out = tmp_path / "out"

        assert result.exit_code == 0, result.output
        trace = read_trace(out / "trace.csv")
        state, header = read_state(out / "final_state.bin")
        summary = _summary(out)

        assert trace.last.t == pytest.approx(0.05)
        assert header.t_final == pytest.approx(0.05)
        assert state.spec.d == 0
        assert summary["status"] == "completed"
        assert summary["command"] == "run"
        assert summary["monitors"]["max_principle_phi"]["passed"]
        assert summary["threshold"]["bradlow"]["threshold"] == 0.0
        assert summary["steps"]["accepted"] >= 1
        assert not (out / "u_final.bin").exists()

    def test_metric_engine_with_snapshots(
        self, write_config: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test u_final.bin and per-step snapshots for the metric engine."""
        path = write_config(CONSTANT_RUN + "flow.engine = metric\noutput.snapshot_every = 1\n")
        result = runner.invoke(app, ["run", "-c", str(path)])
        out = tmp_path / "out"

        assert result.exit_code == 0, result.output
        u, header = read_metric(out / "u_final.bin")
        # |phi|^2 = 0.25 e^{2u} follows the logistic ODE towards tau = 1
        assert np.all(u > 0.0)
        assert header.t_final == pytest.approx(0.05)
        snapshot, _ = read_state(out / "snapshot_00000001.bin")
        assert snapshot.spec.n == 1
        assert _summary(out)["engine"] == "metric"

    def test_vortex_engine(self, write_config: Callable[..., Path], tmp_path: Path) -> None:
        """Test a short vortex-functional run and its holomorphy monitor."""
        path = write_config(
            THETA_BASE
            + "tau = 2\nflow.engine = vortex\nflow.t_end = 0.01\n"
            + "monitors.holomorphy_threshold = 1.0\n"
        )
        result = runner.invoke(app, ["run", "-c", str(path)])
        summary = _summary(tmp_path / "out")

        assert result.exit_code == 0, result.output
        assert summary["engine"] == "vortex"
        assert summary["monitors"]["holomorphy"]["passed"]
        assert summary["holomorphy"]["threshold"] == 1.0

    def test_vortex_engine_threshold(self, write_config: Callable[..., Path]) -> None:
        """Test that a pair outside the holomorphy threshold stops the vortex flow."""
        path = write_config(
            THETA_BASE
            + "tau = 2\nflow.engine = vortex\nflow.t_end = 0.01\n"
            + "monitors.holomorphy_threshold = 1e-12\n"
        )
        result = runner.invoke(app, ["run", "-c", str(path)])

        assert result.exit_code == 2
        assert "holomorphy defect" in result.output

    def test_holomorphy_monitor_fails_on_random_data(
        self, write_config: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test that the direct engine reports, but does not stop on, the defect."""
        path = write_config(
            "tau = 1\ngeometry.N = 8\nbundle.d = 0\ninit.kind = random\n"
            "flow.t_end = 0.01\nmonitors.holomorphy_threshold = 1e-12\n"
        )
        result = runner.invoke(app, ["run", "-c", str(path)])
        verdict = _summary(tmp_path / "out")["monitors"]["holomorphy"]

        assert result.exit_code == 0, result.output
        assert not verdict["passed"]
        assert verdict["details"]["threshold"] == 1e-12


class TestCheckGradient:
    """Test the check-gradient command."""

    def test_random_rank2(self, write_config: Callable[..., Path]) -> None:
        """Test that the analytic gradient passes on a random rank-2 pair."""
        path = write_config(
            """
            tau = 1.5
            geometry.N = 8
            bundle.n = 2
            bundle.d = 0
            init.kind = random
            init.seed = 7
            init.band_limit = 2
            init.amplitude = 0.5
            oracle.fd_samples = 10
            """
        )
        result = runner.invoke(app, ["check-gradient", "-c", str(path)])

        assert result.exit_code == 0, result.output
        assert "matches" in result.output


class TestEnergyIdentity:
    """Test the energy-identity command."""

    def test_constant_data(self, write_config: Callable[..., Path]) -> None:
        """Test that an exact identity passes at rounding level."""
        result = runner.invoke(app, ["energy-identity", "-c", str(write_config(CONSTANT_RUN))])

        assert result.exit_code == 0, result.output


class TestKWSolve:
    """Test the kw-solve command."""

    def test_infeasible(self, write_config: Callable[..., Path], tmp_path: Path) -> None:
        """Test exit code 4 below the Bradlow threshold."""
        path = write_config(THETA_BASE + "tau = 0.5\n")
        result = runner.invoke(app, ["kw-solve", "-c", str(path)])

        assert result.exit_code == 4
        assert "threshold" in result.output
        assert not (tmp_path / "out" / "u_star.bin").exists()

    def test_constant_data(self, write_config: Callable[..., Path], tmp_path: Path) -> None:
        """Test u* = log 2 for |phi_0|^2 = 1/4 and tau = 1."""
        result = runner.invoke(app, ["kw-solve", "-c", str(write_config(CONSTANT_RUN))])
        out = tmp_path / "out"

        assert result.exit_code == 0, result.output
        u, header = read_metric(out / "u_star.bin")
        np.testing.assert_allclose(u, math.log(2.0), atol=1e-9)
        summary = _summary(out)
        assert summary["residual"] <= 1e-10
        assert summary["linearized_max_eigenvalue"] == pytest.approx(-1.0, abs=1e-6)
        assert (out / "residual_history.csv").read_text().startswith("iteration,residual")

    def test_no_convergence(self, write_config: Callable[..., Path], tmp_path: Path) -> None:
        """Test exit code 1 and the residual history when Newton runs out of iterations."""
        path = write_config(THETA_BASE + "tau = 2\noracle.max_iter = 1\noracle.tol = 1e-14\n")
        result = runner.invoke(app, ["kw-solve", "-c", str(path)])

        assert result.exit_code == 1
        assert (tmp_path / "out" / "residual_history.csv").exists()


class TestCompareFlows:
    """Test the compare-flows command."""

    def test_needs_line_bundle(self, write_config: Callable[..., Path]) -> None:
        """Test that rank-2 configs exit 2."""
        path = write_config("bundle.n = 2\nbundle.d = 0\ninit.kind = random\ngeometry.N = 8")
        result = runner.invoke(app, ["compare-flows", "-c", str(path)])

        assert result.exit_code == 2

    def test_needs_holomorphic_pair(self, write_config: Callable[..., Path]) -> None:
        """Test that compare-flows refuses a pair outside the holomorphy threshold."""
        path = write_config(THETA_BASE + "tau = 2\nmonitors.holomorphy_threshold = 1e-12\n")
        result = runner.invoke(app, ["compare-flows", "-c", str(path)])

        assert result.exit_code == 2
        assert "holomorphy defect" in result.output

    def test_discrepancy(self) -> None:
        """Test interpolation onto the direct time grid."""
        direct = _trace([(0.0, 2.0), (1.0, 1.0)])
        metric = _trace([(0.0, 2.0), (0.5, 1.5), (1.0, 1.01)])

        discrepancy = flow_discrepancy(direct, metric)

        assert discrepancy["ymh"] == pytest.approx(0.01)
        assert discrepancy["sup_phi_sq"] == 0.0
