"""Run artifacts: trace.csv, final_state.bin, u_star.bin and summary.json.

Binary layouts (all little-endian, row-major):

    final_state.bin  b"KVF1", u32 {m, N, n, d}, f64 {L, tau, t_final},
                     A as [direction, *sites, n, n] complex, then phi as
                     [*sites, n] complex; complex entries are interleaved
                     (real, imag) f64 pairs
    u_star.bin       b"KVU1", u32 {m, N, n, d}, f64 {L, tau, t_final},
                     u as [*sites] f64

The degree d is stored as its 32-bit two's complement.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .bundle import BundleSpec, FieldState
from .config import RunConfig
from .conventions import CONVENTION_HASH
from .diagnostics import TRACE_COLUMNS, DiagnosticsTrace, TraceRow
from .flow import MetricState
from .lattice import FormField, build_torus
from .types import ArtifactError

STATE_MAGIC = b"KVF1"
METRIC_MAGIC = b"KVU1"
_HEADER = struct.Struct("<4sIIIIddd")


@dataclass(frozen=True)
class StoredHeader:
    m: int
    N: int
    n: int
    d: int
    L: float
    tau: float
    t_final: float


# ──────────────────────────────────────────────────────────────────────────────
# Trace
# ──────────────────────────────────────────────────────────────────────────────


def format_trace(trace: DiagnosticsTrace) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for row in trace:
        lines.append(",".join(format(value, ".17g") for value in row.values()))
    return "\n".join(lines) + "\n"


def write_trace(path: Path, trace: DiagnosticsTrace) -> None:
    path.write_text(format_trace(trace))


def read_trace(path: Path) -> DiagnosticsTrace:
    lines = path.read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != TRACE_COLUMNS:
        raise ArtifactError(f"{path} does not start with the trace header")
    trace = DiagnosticsTrace()
    for line in lines[1:]:
        if line:
            trace.append(TraceRow(*(float(value) for value in line.split(","))))
    return trace


# ──────────────────────────────────────────────────────────────────────────────
# Binary fields
# ──────────────────────────────────────────────────────────────────────────────


def _pack_header(magic: bytes, header: StoredHeader) -> bytes:
    return _HEADER.pack(
        magic,
        header.m,
        header.N,
        header.n,
        header.d & 0xFFFFFFFF,
        header.L,
        header.tau,
        header.t_final,
    )


def _unpack_header(blob: bytes, magic: bytes) -> StoredHeader:
    if len(blob) < _HEADER.size:
        raise ArtifactError("artifact is shorter than its header")
    found, m, N, n, d, L, tau, t_final = _HEADER.unpack_from(blob)
    if found != magic:
        raise ArtifactError(f"expected magic {magic!r}, found {found!r}")
    if d >= 2**31:
        d -= 2**32
    return StoredHeader(m=m, N=N, n=n, d=d, L=L, tau=tau, t_final=t_final)


def _complex_bytes(data: NDArray[Any]) -> bytes:
    return np.ascontiguousarray(data, dtype="<c16").tobytes()


def encode_state(state: FieldState, tau: float, t_final: float) -> bytes:
    geom, spec = state.geom, state.spec
    header = StoredHeader(
        m=geom.m, N=geom.N, n=spec.n, d=spec.d, L=geom.L, tau=tau, t_final=t_final
    )
    return (
        _pack_header(STATE_MAGIC, header)
        + _complex_bytes(state.A.data)
        + _complex_bytes(state.phi_values)
    )


def write_state(path: Path, state: FieldState, tau: float, t_final: float) -> None:
    path.write_bytes(encode_state(state, tau, t_final))


def decode_state(blob: bytes) -> tuple[FieldState, StoredHeader]:
    header = _unpack_header(blob, STATE_MAGIC)
    geom = build_torus(header.m, header.L, header.N)
    spec = BundleSpec(n=header.n, d=header.d)
    a_shape = (geom.dim, *geom.grid_shape, spec.n, spec.n)
    phi_shape = (*geom.grid_shape, spec.n)
    a_count, phi_count = math.prod(a_shape), math.prod(phi_shape)
    expected = _HEADER.size + 16 * (a_count + phi_count)
    if len(blob) != expected:
        raise ArtifactError(
            f"state artifact has {len(blob)} bytes, expected {expected}"
        )
    values = np.frombuffer(blob, dtype="<c16", offset=_HEADER.size)
    A = values[:a_count].reshape(a_shape).astype(np.complex128)
    phi = values[a_count:].reshape(phi_shape).astype(np.complex128)
    state = FieldState(
        spec=spec,
        geom=geom,
        A=FormField(1, A, geom),
        phi=FormField(0, phi[np.newaxis], geom),
    )
    return state, header


def read_state(path: Path) -> tuple[FieldState, StoredHeader]:
    return decode_state(path.read_bytes())


def write_metric(
    path: Path, mstate: MetricState, tau: float, t_final: float = 0.0
) -> None:
    geom, spec = mstate.base.geom, mstate.base.spec
    header = StoredHeader(
        m=geom.m, N=geom.N, n=spec.n, d=spec.d, L=geom.L, tau=tau, t_final=t_final
    )
    payload = np.ascontiguousarray(mstate.values, dtype="<f8").tobytes()
    path.write_bytes(_pack_header(METRIC_MAGIC, header) + payload)


def read_metric(path: Path) -> tuple[NDArray[np.float64], StoredHeader]:
    """Stored u and its header; pair it with the base to rebuild a MetricState."""
    blob = path.read_bytes()
    header = _unpack_header(blob, METRIC_MAGIC)
    shape = (header.N,) * (2 * header.m)
    expected = _HEADER.size + 8 * math.prod(shape)
    if len(blob) != expected:
        raise ArtifactError(
            f"metric artifact has {len(blob)} bytes, expected {expected}"
        )
    u = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(shape)
    return u.astype(np.float64), header


# ──────────────────────────────────────────────────────────────────────────────
# Summary
# ──────────────────────────────────────────────────────────────────────────────


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def build_summary(config: RunConfig, results: dict[str, Any]) -> dict[str, Any]:
    """Results plus the resolved config and the convention hash."""
    from . import __version__

    return _jsonable(
        {
            **results,
            "config": config.as_dict(),
            "convention_hash": CONVENTION_HASH,
            "version": __version__,
        }
    )


def write_summary(path: Path, config: RunConfig, results: dict[str, Any]) -> None:
    summary = build_summary(config, results)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_residual_history(path: Path, history: list[float]) -> None:
    lines = ["iteration,residual"]
    lines.extend(f"{k},{value:.17g}" for k, value in enumerate(history))
    path.write_text("\n".join(lines) + "\n")
