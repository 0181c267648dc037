"""Shared fixtures for the unit tests: small lattices and deterministic pairs."""

import math
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from vortex_flow.bundle import BundleSpec, FieldState, random_state, theta_state
from vortex_flow.lattice import LatticeGeometry, build_torus

STANDARD_L = math.sqrt(4.0 * math.pi)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def curve() -> LatticeGeometry:
    """Standard torus of area 4 pi on a coarse grid."""
    return build_torus(1, STANDARD_L, 8)


@pytest.fixture
def surface() -> LatticeGeometry:
    return build_torus(2, STANDARD_L, 4)


@pytest.fixture
def random_line_pair(curve: LatticeGeometry) -> FieldState:
    return random_state(BundleSpec(n=1, d=0), curve, seed=3, band_limit=2, amplitude=0.5)


@pytest.fixture
def random_rank2_pair(curve: LatticeGeometry) -> FieldState:
    return random_state(BundleSpec(n=2, d=0), curve, seed=5, band_limit=2, amplitude=0.5)


@pytest.fixture
def theta_pair() -> FieldState:
    """Degree-1 theta data on the standard torus, N = 16."""
    geom = build_torus(1, STANDARD_L, 16)
    return theta_state(BundleSpec(n=1, d=1), geom)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """Write a config file whose output directory lives under ``tmp_path``."""

    def _write(body: str, name: str = "run.cfg", output: str = "out") -> Path:
        path = tmp_path / name
        text = body.strip() + f"\noutput.directory = {tmp_path / output}\n"
        path.write_text(text)
        return path

    return _write
