"""Run configuration: flat ``section.key = value`` files and environment flags.

This module must stay importable before numpy: the package ``__init__``
calls ``apply_thread_limit`` from here so that ``KVF_THREADS`` reaches the
BLAS and OpenMP runtimes before they start.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, get_args

from .types import ConfigError, FlowEngine, InitKind, StepMethod, VortexFlowError

THREADS_ENV_VAR = "KVF_THREADS"
DEBUG_ENV_VAR = "KVF_DEBUG"

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def debug_enabled() -> bool:
    return os.environ.get(DEBUG_ENV_VAR, "false").lower() == "true"


def apply_thread_limit() -> int | None:
    """Copy KVF_THREADS into the thread variables of the numerical runtimes.

    Variables the user has already set are left alone.
    """
    raw = os.getenv(THREADS_ENV_VAR)
    if not raw:
        return None
    try:
        threads = int(raw.strip())
    except ValueError:
        return None
    if threads < 1:
        return None
    for name in _THREAD_VARS:
        os.environ.setdefault(name, str(threads))
    return threads


# ──────────────────────────────────────────────────────────────────────────────
# Sections
# ──────────────────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class GeometryConfig:
    m: int = 1
    L: float = math.sqrt(4.0 * math.pi)
    N: int = 32


@dataclass(frozen=True)
class BundleConfig:
    n: int = 1
    d: int = 1


@dataclass(frozen=True)
class InitConfig:
    kind: InitKind = "theta"
    seed: int = 0
    band_limit: int = 2
    scale: float = 1.0
    value: float | None = None  # constant section; defaults to sqrt(tau)
    amplitude: float = 1.0
    truncation: int = 5


@dataclass(frozen=True)
class FlowConfig:
    engine: FlowEngine = "direct"
    method: StepMethod = "rk4"
    dt_init: float | None = None  # defaults to cfl_factor * h^2
    t_end: float = 10.0
    cfl_factor: float = 0.2
    adapt: bool = True
    eps_vortex: float = 1e-3
    stop_at_vortex: bool = False


@dataclass(frozen=True)
class MonitorConfig:
    max_principle: float = 1e-6
    ehat_monotone: float = 1e-6
    lambdaF_bound: float = 1e-6
    holomorphy_threshold: float = 5e-2


@dataclass(frozen=True)
class OracleConfig:
    tol: float = 1e-10
    max_iter: int = 100
    fd_eps: float = 1e-5
    fd_samples: int = 50


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/default"
    record_every: int = 10
    snapshot_every: int = 0


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved experiment description."""

    tau: float = 2.0
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    init: InitConfig = field(default_factory=InitConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    monitors: MonitorConfig = field(default_factory=MonitorConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def h_spacing(self) -> float:
        return self.geometry.L / self.geometry.N

    @property
    def dt_init(self) -> float:
        if self.flow.dt_init is not None:
            return self.flow.dt_init
        return self.flow.cfl_factor * self.h_spacing**2

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


_SECTIONS = ("geometry", "bundle", "init", "flow", "monitors", "oracle", "output")


# ──────────────────────────────────────────────────────────────────────────────
# Value coercion
# ──────────────────────────────────────────────────────────────────────────────

_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_PI_MULTIPLE = re.compile(rf"^({_NUMBER})?\s*\*?\s*pi$")
_SQRT_PI_MULTIPLE = re.compile(rf"^sqrt\(\s*({_NUMBER})?\s*\*?\s*pi\s*\)$")


def parse_real(text: str) -> float:
    """Parse a float, also accepting ``<a>pi`` and ``sqrt(<a>pi)``."""
    text = text.strip().lower()
    match = _SQRT_PI_MULTIPLE.match(text)
    if match:
        return math.sqrt(float(match.group(1) or 1.0) * math.pi)
    match = _PI_MULTIPLE.match(text)
    if match:
        return float(match.group(1) or 1.0) * math.pi
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _parse_int(text: str) -> int:
    return int(text.strip())


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "on", "yes", "1"):
        return True
    if lowered in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_real(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else parse_real(text)


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value

    return parse


_COERCERS: dict[str, Callable[[str], Any]] = {
    "int": _parse_int,
    "float": parse_real,
    "bool": _parse_bool,
    "str": str.strip,
    "float | None": _parse_optional_real,
    "InitKind": _choice(get_args(InitKind)),
    "FlowEngine": _choice(get_args(FlowEngine)),
    "StepMethod": _choice(get_args(StepMethod)),
}


def _coerce(key: str, type_name: str, text: str) -> Any:
    try:
        return _COERCERS[type_name](text)
    except (ValueError, KeyError) as e:
        raise ConfigError(str(e), key) from e


# ──────────────────────────────────────────────────────────────────────────────
# Parsing
# ──────────────────────────────────────────────────────────────────────────────


def _config_lines(text: str) -> list[tuple[int, str, str]]:
    entries = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        entries.append((number, key.strip(), value.strip().strip("\"'")))
    return entries


def parse_config(text: str) -> RunConfig:
    """Parse flat config text into a RunConfig; unset keys keep their defaults.

    Raises:
        ConfigError: On malformed lines, unknown or repeated keys and
            values that cannot be coerced to the field type
    """
    config = RunConfig()
    top_fields = {f.name: f for f in fields(RunConfig)}
    sections: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    top: dict[str, Any] = {}
    seen: set[str] = set()

    for number, key, value in _config_lines(text):
        if key in seen:
            raise ConfigError(f"line {number}: repeated key", key)
        seen.add(key)
        section, _, name = key.partition(".")
        if not name:
            if key not in top_fields or key in _SECTIONS:
                raise ConfigError("unknown key", key)
            top[key] = _coerce(key, str(top_fields[key].type), value)
            continue
        if section not in sections:
            raise ConfigError("unknown section", key)
        section_fields = {f.name: f for f in fields(getattr(config, section))}
        if name not in section_fields:
            raise ConfigError("unknown key", key)
        sections[section][name] = _coerce(key, str(section_fields[name].type), value)

    updates: dict[str, Any] = dict(top)
    for name, values in sections.items():
        if values:
            updates[name] = replace(getattr(config, name), **values)
    return replace(config, **updates)


def load_config(path: Path | str) -> RunConfig:
    """Read, parse and validate a config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    config = parse_config(text)
    validate_config(config)
    return config


# ──────────────────────────────────────────────────────────────────────────────
# Validation
# ──────────────────────────────────────────────────────────────────────────────


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(message, key)


def validate_config(config: RunConfig) -> None:
    """Check every module precondition the run depends on.

    Only scalar checks happen here; no field is allocated.
    """
    # numerical modules import numpy, which must follow apply_thread_limit
    from .bundle import BundleSpec, validate_topology
    from .lattice import build_torus

    geo, bundle, init, flow = config.geometry, config.bundle, config.init, config.flow
    try:
        geom = build_torus(geo.m, geo.L, geo.N)
    except VortexFlowError as e:
        raise ConfigError(str(e), "geometry") from e
    try:
        validate_topology(BundleSpec(n=bundle.n, d=bundle.d), geom)
    except VortexFlowError as e:
        raise ConfigError(str(e), "bundle") from e
    _require(config.tau > 0, "tau", "must be positive")

    if init.kind == "theta":
        _require(
            geo.m == 1 and bundle.n == 1 and bundle.d >= 1,
            "init.kind",
            "theta initial data needs m = 1, n = 1 and d >= 1",
        )
        _require(init.truncation >= 1, "init.truncation", "must be at least 1")
    elif init.kind == "constant":
        _require(bundle.d == 0, "init.kind", "constant initial data needs d = 0")
    else:
        _require(
            0 <= init.band_limit <= geo.N // 4,
            "init.band_limit",
            f"must lie in [0, N/4] = [0, {geo.N // 4}]",
        )
    _require(init.amplitude > 0, "init.amplitude", "must be positive")

    _require(flow.t_end > 0, "flow.t_end", "must be positive")
    _require(flow.cfl_factor > 0, "flow.cfl_factor", "must be positive")
    bound = flow.cfl_factor * geom.h_spacing**2
    _require(
        0 < config.dt_init <= bound * (1 + 1e-12),
        "flow.dt_init",
        f"must lie in (0, cfl_factor * h^2] = (0, {bound:.6g}]",
    )
    _require(flow.eps_vortex > 0, "flow.eps_vortex", "must be positive")
    if flow.engine == "metric":
        _require(
            geo.m == 1 and bundle.n == 1,
            "flow.engine",
            "the metric flow needs m = 1 and n = 1",
        )

    for f in fields(MonitorConfig):
        key = f"monitors.{f.name}"
        _require(getattr(config.monitors, f.name) > 0, key, "must be positive")

    oracle = config.oracle
    _require(oracle.tol > 0, "oracle.tol", "must be positive")
    _require(oracle.max_iter >= 1, "oracle.max_iter", "must be at least 1")
    _require(1e-7 <= oracle.fd_eps <= 1e-3, "oracle.fd_eps", "must lie in [1e-7, 1e-3]")
    _require(oracle.fd_samples >= 1, "oracle.fd_samples", "must be at least 1")

    output = config.output
    _require(bool(output.directory), "output.directory", "must not be empty")
    _require(output.record_every >= 1, "output.record_every", "must be at least 1")
    _require(output.snapshot_every >= 0, "output.snapshot_every", "must be >= 0")


def _render(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(config: RunConfig) -> str:
    """Render a config back into the flat file format."""
    lines = [f"tau = {config.tau!r}"]
    for section in _SECTIONS:
        for key, value in asdict(getattr(config, section)).items():
            rendered = _render(value)
            lines.append(f"{section}.{key} = {rendered}")
    return "\n".join(lines) + "\n"
