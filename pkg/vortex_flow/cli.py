"""vortex-flow CLI - batch front end for the lattice vortex flows."""

from __future__ import annotations

from dataclasses import asdict, replace
from functools import partial
from pathlib import Path
from typing import Annotated, Any, NoReturn, Optional

import numpy as np
import typer
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from . import __version__
from .bundle import (
    BundleSpec,
    FieldState,
    constant_state,
    random_state,
    theta_state,
)
from .config import RunConfig, load_config
from .diagnostics import (
    DiagnosticsTrace,
    MonitorTolerances,
    bradlow_check,
    check_ehat_monotone,
    check_holomorphy_threshold,
    check_lambdaF_bounded,
    check_max_principle_phi,
    convergence_order,
    holomorphy_defect,
)
from .energy import energy_identity, topological_constants
from .flow import (
    FlowSchedule,
    MetricState,
    StepCallback,
    Trajectory,
    Velocity,
    integrate,
    integrate_metric_flow,
    linearized_max_eigenvalue,
    metric_observables,
    reconstructed_pair,
    vortex_gradient,
    ymh_gradient,
)
from .lattice import LatticeGeometry, build_torus
from .oracle import eps_sweep, fd_gradient, kw_solve, plateau_energy, random_coordinates
from .serialize import (
    write_metric,
    write_residual_history,
    write_state,
    write_summary,
    write_trace,
)
from .types import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    HolomorphyError,
    InfeasibleError,
    InstabilityError,
    VortexFlowError,
)

EXIT_GATE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_INFEASIBLE = 4

GRADIENT_GATE = 1e-6
ORDER_GATE = 1.8
# identity residuals below this are rounding noise and pass regardless of order
ROUNDING_RESIDUAL = 1e-12
COMPARE_GATE = 1e-2
COMPARE_FLOOR = 1e-3

app = typer.Typer(
    name="kvf",
    help="vortex-flow - lattice gradient flows of the vortex functional",
    rich_markup_mode="markdown",
)
console = Console()

ConfigOption = Annotated[
    Path,
    typer.Option(
        "--config",
        "-c",
        help="Path to a flat `section.key = value` run config",
        dir_okay=False,
    ),
]


# ──────────────────────────────────────────────────────────────────────────────
# Error handling
# ──────────────────────────────────────────────────────────────────────────────


def exit_code_for(e: Exception) -> int:
    if isinstance(e, (DivergenceError, InstabilityError)):
        return EXIT_DIVERGENCE
    if isinstance(e, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(e, ConvergenceError):
        return EXIT_GATE
    return EXIT_CONFIG


def handle_run_error(e: Exception) -> None:
    """Print a run error with a user-friendly message."""
    if isinstance(e, InfeasibleError):
        report = e.report
        console.print(f"[red]🚫 Infeasible: {e}[/red]")
        console.print(
            f"   threshold={report['threshold']:.12g}  margin={report['margin']:.6g}"
            f"  borderline={report['borderline']}"
        )
    elif isinstance(e, DivergenceError):
        console.print(f"[red]💥 Diverged at t={e.t:.6g}: {e}[/red]")
    elif isinstance(e, VortexFlowError):
        console.print(f"[red]❌ {e}[/red]")
    else:
        console.print(f"[red]❌ Error: {e}[/red]")


def fail(e: Exception) -> NoReturn:
    handle_run_error(e)
    raise typer.Exit(exit_code_for(e))


# ──────────────────────────────────────────────────────────────────────────────
# Building runs from a config
# ──────────────────────────────────────────────────────────────────────────────


def geometry_of(config: RunConfig) -> LatticeGeometry:
    geo = config.geometry
    return build_torus(geo.m, geo.L, geo.N)


def initial_state(config: RunConfig) -> FieldState:
    """The configured initial pair; deterministic for a fixed config."""
    geom = geometry_of(config)
    spec = BundleSpec(n=config.bundle.n, d=config.bundle.d)
    init = config.init
    if init.kind == "theta":
        return theta_state(spec, geom, scale=init.scale, truncation=init.truncation)
    if init.kind == "constant":
        value = init.value if init.value is not None else float(np.sqrt(config.tau))
        return constant_state(spec, geom, value)
    return random_state(spec, geom, init.seed, init.band_limit, init.amplitude)


def schedule_of(config: RunConfig) -> FlowSchedule:
    flow = config.flow
    return FlowSchedule(
        dt_init=config.dt_init,
        t_end=flow.t_end,
        cfl_factor=flow.cfl_factor,
        adapt=flow.adapt,
        record_every=config.output.record_every,
        method=flow.method,
        eps_vortex=flow.eps_vortex,
        stop_at_vortex=flow.stop_at_vortex,
    )


def tolerances_of(config: RunConfig) -> MonitorTolerances:
    monitors = config.monitors
    return MonitorTolerances(
        max_principle=monitors.max_principle,
        ehat_monotone=monitors.ehat_monotone,
        lambdaF_bound=monitors.lambdaF_bound,
        holomorphy_threshold=monitors.holomorphy_threshold,
    )


def monitor_verdicts(
    trace: DiagnosticsTrace,
    tau: float,
    tolerances: MonitorTolerances,
    defects: list[float],
) -> dict[str, Any]:
    return {
        "max_principle_phi": check_max_principle_phi(trace, tau, tolerances),
        "ehat_monotone": check_ehat_monotone(trace, tolerances),
        "lambdaF_bounded": check_lambdaF_bounded(trace, tau, tolerances),
        "holomorphy": check_holomorphy_threshold(defects, tolerances),
    }


def velocity_of(config: RunConfig) -> Velocity:
    """Step velocity of a pair-valued engine."""
    if config.flow.engine == "vortex":
        return partial(
            vortex_gradient, threshold=config.monitors.holomorphy_threshold
        )
    return ymh_gradient


def recorded_defects(trajectory: Trajectory) -> list[float]:
    return [
        holomorphy_defect(
            reconstructed_pair(state) if isinstance(state, MetricState) else state
        )
        for state in trajectory.states
    ]


def threshold_data(config: RunConfig, geom: LatticeGeometry) -> dict[str, Any] | None:
    """Bradlow report and plateau energy; only defined for line bundles on curves."""
    if config.geometry.m != 1 or config.bundle.n != 1:
        return None
    spec = BundleSpec(n=1, d=config.bundle.d)
    return {
        "bradlow": bradlow_check(spec, geom, config.tau),
        "plateau_energy": plateau_energy(spec, geom, config.tau),
    }


def _relative_gap(value: float, target: float) -> float | None:
    if target == 0.0:
        return None
    return abs(value - target) / abs(target)


def _print_trace_summary(title: str, trace: DiagnosticsTrace) -> None:
    last = trace.last
    table = Table(title=title, show_header=True, header_style="bold cyan")
    table.add_column("Quantity", style="cyan")
    table.add_column("Final value", style="green", justify="right")
    for name, value in asdict(last).items():
        table.add_row(name, f"{value:.10g}")
    console.print(table)


def _print_verdicts(verdicts: dict[str, Any]) -> None:
    table = Table(title="Monitors", show_header=True, header_style="bold cyan")
    table.add_column("Monitor", style="cyan")
    table.add_column("Status")
    table.add_column("Margin", justify="right")
    for name, verdict in verdicts.items():
        status = "[green]✅ pass[/green]" if verdict["passed"] else "[red]❌ fail[/red]"
        table.add_row(name, status, f"{verdict['margin']:.3e}")
    console.print(table)


# ──────────────────────────────────────────────────────────────────────────────
# App
# ──────────────────────────────────────────────────────────────────────────────


def version_callback(value: bool) -> None:
    """Show version and exit."""
    if value:
        console.print(f"vortex-flow version {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: Annotated[
        Optional[bool],
        typer.Option("--version", callback=version_callback, help="Show version"),
    ] = None,
) -> None:
    """vortex-flow - gradient flows of the vortex functional on flat tori."""


# ──────────────────────────────────────────────────────────────────────────────
# run
# ──────────────────────────────────────────────────────────────────────────────


def _snapshot_writer(config: RunConfig, directory: Path) -> StepCallback | None:
    every = config.output.snapshot_every
    if every <= 0:
        return None

    def on_step(step: int, t: float, state: Any) -> None:
        if step % every:
            return
        pair = reconstructed_pair(state) if isinstance(state, MetricState) else state
        write_state(directory / f"snapshot_{step:08d}.bin", pair, config.tau, t)

    return on_step


def _run_results(
    config: RunConfig,
    geom: LatticeGeometry,
    trajectory: Trajectory,
    trace: DiagnosticsTrace,
    final: FieldState,
) -> dict[str, Any]:
    tau = config.tau
    defects = recorded_defects(trajectory)
    verdicts = monitor_verdicts(trace, tau, tolerances_of(config), defects)
    report = energy_identity(final, tau)
    topo = topological_constants(final.spec, geom, tau)
    last = trace.last
    results: dict[str, Any] = {
        "command": "run",
        "status": "completed",
        "engine": config.flow.engine,
        "t_final": last.t,
        "steps": {"accepted": trajectory.accepted, "rejected": trajectory.rejected},
        "stopped_early": trajectory.stopped_early,
        "final": asdict(last),
        "energy": report.as_dict(),
        "topology": topo,
        "monitors": verdicts,
        "holomorphy": {
            "dbar_initial": trace.rows[0].dbar_residual,
            "dbar_final": last.dbar_residual,
            "defect_final": defects[-1],
            "threshold": config.monitors.holomorphy_threshold,
        },
        "targets": {
            "vortex_energy": topo["topo_const"],
            "vortex_energy_gap": _relative_gap(last.ymh, topo["topo_const"]),
        },
    }
    thresholds = threshold_data(config, geom)
    if thresholds is not None:
        results["threshold"] = thresholds
        results["targets"]["plateau_gap"] = _relative_gap(
            last.ymh, thresholds["plateau_energy"]
        )
    return results


@app.command()
def run(config_path: ConfigOption) -> None:
    """Integrate the configured flow and write its artifacts.

    Writes `trace.csv`, `final_state.bin` and `summary.json` (plus
    `u_final.bin` for the metric engine and optional snapshots) into
    `output.directory`.

    Examples:
        Feasible vortex run: kvf run --config configs/feasible.cfg
        Vortex-functional flow: kvf run --config configs/vortex.cfg
        Below the threshold: kvf run --config configs/infeasible.cfg
    """
    try:
        config = load_config(config_path)
    except VortexFlowError as e:
        fail(e)

    directory = Path(config.output.directory)
    try:
        geom = geometry_of(config)
        state = initial_state(config)
        schedule = schedule_of(config)
        directory.mkdir(parents=True, exist_ok=True)
        on_step = _snapshot_writer(config, directory)

        console.print(
            f"🌀 Running the {config.flow.engine} flow to t={config.flow.t_end:g} "
            f"(N={geom.N}, tau={config.tau:g})..."
        )
        metric_final: MetricState | None = None
        if config.flow.engine == "metric":
            trajectory, trace = integrate_metric_flow(
                MetricState.initial(state), config.tau, schedule, on_step
            )
            metric_final = trajectory.final_state
            final = reconstructed_pair(metric_final)
        else:
            trajectory, trace = integrate(
                state, config.tau, schedule, on_step, velocity_of(config)
            )
            final = trajectory.final_state
    except DivergenceError as e:
        if e.trace is not None:
            write_trace(directory / "trace.csv", e.trace)
        if e.last_state is not None:
            write_state(directory / "final_state.bin", e.last_state, config.tau, e.t)
        write_summary(
            directory / "summary.json",
            config,
            {"command": "run", "status": "diverged", "t_final": e.t, "error": str(e)},
        )
        fail(e)
    except VortexFlowError as e:
        if directory.exists() and isinstance(e, InstabilityError):
            write_summary(
                directory / "summary.json",
                config,
                {"command": "run", "status": "unstable", "error": str(e)},
            )
        fail(e)

    t_final = trajectory.final_time
    write_trace(directory / "trace.csv", trace)
    write_state(directory / "final_state.bin", final, config.tau, t_final)
    if metric_final is not None:
        write_metric(directory / "u_final.bin", metric_final, config.tau, t_final)
    results = _run_results(config, geom, trajectory, trace, final)
    write_summary(directory / "summary.json", config, results)

    _print_trace_summary("Final state", trace)
    _print_verdicts(results["monitors"])
    console.print(
        Panel(
            f"[green]✅ Reached t={t_final:.6g} in {trajectory.accepted} steps "
            f"({trajectory.rejected} rejected)[/green]\n"
            f"Artifacts: {directory}",
            title="Run complete",
            border_style="green",
        )
    )


# ──────────────────────────────────────────────────────────────────────────────
# check-gradient
# ──────────────────────────────────────────────────────────────────────────────


@app.command("check-gradient")
def check_gradient(config_path: ConfigOption) -> None:
    """Compare the analytic ymh gradient with central differences.

    Samples `oracle.fd_samples` coordinates (seeded by `init.seed`) and exits
    0 when the maximum relative deviation is at most 1e-6.

    Examples:
        Rank 2 random state: kvf check-gradient --config configs/gradient_n2.cfg
    """
    try:
        config = load_config(config_path)
        state = initial_state(config)
        sample = random_coordinates(state, config.oracle.fd_samples, config.init.seed)
        check = fd_gradient(state, config.tau, config.oracle.fd_eps, sample)
        sweep = eps_sweep(state, config.tau, sample)
    except VortexFlowError as e:
        fail(e)

    # derivatives scale with the cell volume; a vortex has a near-zero gradient
    deviation = check.max_relative_deviation(floor=state.geom.cell_volume)
    table = Table(title="Step-size sweep", show_header=True, header_style="bold cyan")
    table.add_column("eps", style="cyan", justify="right")
    table.add_column("max |numeric - analytic|", style="green", justify="right")
    for eps, abs_dev in sweep:
        table.add_row(f"{eps:.0e}", f"{abs_dev:.3e}")
    console.print(table)
    console.print(
        f"Gradient scale {check.scale:.3e}, max relative deviation {deviation:.3e} "
        f"at eps={check.eps:g} over {len(sample)} coordinates"
    )
    if deviation > GRADIENT_GATE:
        console.print(f"[red]❌ Deviation exceeds {GRADIENT_GATE:g}[/red]")
        raise typer.Exit(EXIT_GATE)
    console.print("[green]✅ Analytic gradient matches finite differences[/green]")


# ──────────────────────────────────────────────────────────────────────────────
# energy-identity
# ──────────────────────────────────────────────────────────────────────────────


@app.command("energy-identity")
def energy_identity_command(config_path: ConfigOption) -> None:
    """Check convergence of the energy identity residual under refinement.

    Evaluates the relative residual at N and 2N for the same continuum
    initial data and exits 0 when the observed order is at least 1.8 (or the
    finer residual is at rounding level).

    Examples:
        Trivial bundle over a surface: kvf energy-identity --config configs/identity_m2.cfg
    """
    try:
        config = load_config(config_path)
        resolutions = [config.geometry.N, 2 * config.geometry.N]
        residuals = []
        for N in resolutions:
            refined = replace(config, geometry=replace(config.geometry, N=N))
            report = energy_identity(initial_state(refined), config.tau)
            residuals.append(report.relative_residual or 0.0)
    except VortexFlowError as e:
        fail(e)

    order = convergence_order(residuals, resolutions)[0]
    table = Table(title="Energy identity", show_header=True, header_style="bold cyan")
    table.add_column("N", style="cyan", justify="right")
    table.add_column("relative residual", style="green", justify="right")
    for N, residual in zip(resolutions, residuals):
        table.add_row(str(N), f"{residual:.3e}")
    console.print(table)
    console.print(f"Observed order: {order:.3f}")
    if order >= ORDER_GATE or residuals[-1] <= ROUNDING_RESIDUAL:
        console.print("[green]✅ Energy identity converges[/green]")
        return
    console.print(f"[red]❌ Order below {ORDER_GATE}[/red]")
    raise typer.Exit(EXIT_GATE)


# ──────────────────────────────────────────────────────────────────────────────
# compare-flows
# ──────────────────────────────────────────────────────────────────────────────

COMPARED_COLUMNS = ("ymh", "sup_phi_sq", "sup_lambdaF")


def flow_discrepancy(
    direct: DiagnosticsTrace, metric: DiagnosticsTrace
) -> dict[str, float]:
    """Largest relative difference per compared column on the direct time grid.

    The metric trace is linearly interpolated onto the direct trace times;
    values below COMPARE_FLOOR times the column scale are compared absolutely
    against that floor.
    """
    times = direct.column("t")
    metric_times = metric.column("t")
    result = {}
    for name in COMPARED_COLUMNS:
        reference = direct.column(name)
        aligned = np.interp(times, metric_times, metric.column(name))
        scale = max(float(np.max(np.abs(reference))), 1e-300)
        denominator = np.maximum(np.abs(reference), COMPARE_FLOOR * scale)
        result[name] = float(np.max(np.abs(aligned - reference) / denominator))
    return result


@app.command("compare-flows")
def compare_flows(config_path: ConfigOption) -> None:
    """Run the direct and metric flows from the same pair and compare them.

    Exits 0 when ymh, sup|phi|^2 and sup|Lambda F| agree within 1% over the
    whole run. Exits 2 when the initial pair is further than
    `monitors.holomorphy_threshold` from the holomorphic locus.

    Examples:
        Standard feasible run: kvf compare-flows --config configs/compare.cfg
    """
    try:
        config = load_config(config_path)
        if config.geometry.m != 1 or config.bundle.n != 1:
            raise ConfigError("compare-flows needs m = 1 and n = 1", "bundle.n")
        state = initial_state(config)
        # the metric flow only represents the direct flow from a holomorphic pair
        defect = holomorphy_defect(state)
        if defect > config.monitors.holomorphy_threshold:
            raise HolomorphyError(defect, config.monitors.holomorphy_threshold)
        schedule = schedule_of(config)
        console.print("🌀 Running the direct flow...")
        _, direct = integrate(state, config.tau, schedule)
        console.print("🌀 Running the metric flow...")
        _, metric = integrate_metric_flow(
            MetricState.initial(state), config.tau, schedule
        )
    except VortexFlowError as e:
        fail(e)

    discrepancy = flow_discrepancy(direct, metric)
    worst = max(discrepancy.values())

    table = Table(title="Flow comparison", show_header=True, header_style="bold cyan")
    table.add_column("Quantity", style="cyan")
    table.add_column("direct (final)", justify="right")
    table.add_column("metric (final)", justify="right")
    table.add_column("max rel. discrepancy", style="green", justify="right")
    for name in COMPARED_COLUMNS:
        table.add_row(
            name,
            f"{getattr(direct.last, name):.10g}",
            f"{getattr(metric.last, name):.10g}",
            f"{discrepancy[name]:.3e}",
        )
    console.print(table)

    directory = Path(config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_trace(directory / "trace_direct.csv", direct)
    write_trace(directory / "trace_metric.csv", metric)
    write_summary(
        directory / "summary.json",
        config,
        {
            "command": "compare-flows",
            "discrepancy": discrepancy,
            "max_discrepancy": worst,
            "passed": worst <= COMPARE_GATE,
        },
    )
    if worst > COMPARE_GATE:
        console.print(f"[red]❌ Discrepancy {worst:.3e} exceeds 1%[/red]")
        raise typer.Exit(EXIT_GATE)
    console.print("[green]✅ Direct and metric flows agree[/green]")


# ──────────────────────────────────────────────────────────────────────────────
# kw-solve
# ──────────────────────────────────────────────────────────────────────────────


@app.command("kw-solve")
def kw_solve_command(config_path: ConfigOption) -> None:
    """Solve the stationary metric equation for the configured base pair.

    Writes `u_star.bin`, `residual_history.csv` and `summary.json`. Exits 4
    when tau does not exceed the Bradlow threshold.

    Examples:
        Feasible solve: kvf kw-solve --config configs/kw_solve.cfg
    """
    try:
        config = load_config(config_path)
        base = initial_state(config)
    except VortexFlowError as e:
        fail(e)

    directory = Path(config.output.directory)
    try:
        solution = kw_solve(
            base, config.tau, tol=config.oracle.tol, max_iter=config.oracle.max_iter
        )
    except ConvergenceError as e:
        directory.mkdir(parents=True, exist_ok=True)
        write_residual_history(directory / "residual_history.csv", e.residual_history)
        fail(e)
    except VortexFlowError as e:
        fail(e)

    observables = metric_observables(solution.metric, config.tau)
    eigenvalue = linearized_max_eigenvalue(solution.metric)
    directory.mkdir(parents=True, exist_ok=True)
    write_metric(directory / "u_star.bin", solution.metric, config.tau)
    write_residual_history(
        directory / "residual_history.csv", solution.residual_history
    )
    write_summary(
        directory / "summary.json",
        config,
        {
            "command": "kw-solve",
            "iterations": solution.iterations,
            "residual": solution.residual,
            "moment_inf_norm": solution.moment_inf_norm,
            "ymh": observables["ymh_total"],
            "sup_phi_sq": float(np.max(observables["phi_sq"])),
            "linearized_max_eigenvalue": eigenvalue,
            "threshold": threshold_data(config, base.geom),
        },
    )

    console.print(
        Panel(
            f"Newton iterations: {solution.iterations}\n"
            f"Residual: {solution.residual:.3e}\n"
            f"ymh of the reconstructed pair: {observables['ymh_total']:.12g}\n"
            f"Largest linearized eigenvalue: {eigenvalue:.6g}",
            title="Stationary metric",
            border_style="green",
        )
    )
    console.print(f"[green]✅ Converged; wrote {directory / 'u_star.bin'}[/green]")


def cli() -> None:
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    cli()
