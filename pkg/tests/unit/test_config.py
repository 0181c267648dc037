#!/usr/bin/env python3
"""Test config parsing, validation and the environment flags."""

import math
import os
from collections.abc import Callable
from dataclasses import replace
from pathlib import Path

import pytest

from vortex_flow.config import (
    DEBUG_ENV_VAR,
    THREADS_ENV_VAR,
    RunConfig,
    apply_thread_limit,
    debug_enabled,
    format_config,
    load_config,
    parse_config,
    parse_real,
    validate_config,
)
from vortex_flow.types import ConfigError


class TestParseReal:
    """Test real-number literals in config values."""

    @pytest.mark.parametrize(
        "text, expected",
        [
            ("2pi", 2.0 * math.pi),
            ("pi", math.pi),
            ("0.5 * pi", 0.5 * math.pi),
            ("sqrt(4pi)", math.sqrt(4.0 * math.pi)),
            ("sqrt(pi)", math.sqrt(math.pi)),
            ("1e-3", 1e-3),
            ("-2.5", -2.5),
        ],
    )
    def test_literals(self, text: str, expected: float) -> None:
        """Test plain floats and multiples of pi."""
        assert parse_real(text) == pytest.approx(expected)

    @pytest.mark.parametrize("text", ["inf", "nan", "two", "sqrt(4)"])
    def test_rejected(self, text: str) -> None:
        """Test that non-finite and unknown literals raise ValueError."""
        with pytest.raises(ValueError):
            parse_real(text)


class TestParseConfig:
    """Test the flat key = value format."""

    def test_defaults(self) -> None:
        """Test that an empty file yields the default config."""
        config = parse_config("# nothing set\n\n")

        assert config == RunConfig()
        assert config.geometry.L == pytest.approx(math.sqrt(4.0 * math.pi))
        assert config.dt_init == pytest.approx(0.2 * config.h_spacing**2)

    def test_values(self) -> None:
        """Test sections, comments, quoting and optional values."""
        config = parse_config(
            """
            tau = 1.5              # vortex parameter
            geometry.N = 16
            geometry.L = sqrt(4pi)
            bundle.d = -1
            init.kind = "random"
            init.value = none
            flow.engine = metric
            flow.adapt = off
            flow.dt_init = 1e-3
            output.directory = 'runs/test'
            """
        )

        assert config.tau == 1.5
        assert config.geometry.N == 16
        assert config.bundle.d == -1
        assert config.init.kind == "random"
        assert config.init.value is None
        assert config.flow.engine == "metric"
        assert config.flow.adapt is False
        assert config.dt_init == 1e-3
        assert config.output.directory == "runs/test"

    def test_vortex_engine_on_rank_two(self) -> None:
        """Test that the vortex engine, unlike the metric one, accepts any rank."""
        config = parse_config(
            "bundle.n = 2\nbundle.d = 0\ninit.kind = random\nflow.engine = vortex\n"
            "monitors.holomorphy_threshold = 0.2"
        )
        validate_config(config)

        assert config.flow.engine == "vortex"
        assert config.monitors.holomorphy_threshold == 0.2

    @pytest.mark.parametrize(
        "text, key",
        [
            ("geometry.spacing = 0.1", "geometry.spacing"),
            ("solver.tol = 1e-8", "solver.tol"),
            ("geometry = 2", "geometry"),
            ("seed = 3", "seed"),
            ("flow.adapt = maybe", "flow.adapt"),
            ("init.kind = gaussian", "init.kind"),
            ("geometry.N = 16.5", "geometry.N"),
            ("tau = 1\ntau = 2", "tau"),
        ],
    )
    def test_rejected_keys(self, text: str, key: str) -> None:
        """Test unknown, repeated and uncoercible keys."""
        with pytest.raises(ConfigError) as exc:
            parse_config(text)

        assert exc.value.key == key

    def test_malformed_line(self) -> None:
        """Test that a line without '=' is refused."""
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("tau = 1\ngeometry.N 16\n")

    def test_format_round_trip(self) -> None:
        """Test that a rendered config parses back to itself."""
        config = parse_config("tau = 0.75\nbundle.d = 2\ninit.value = 0.5\nflow.stop_at_vortex = true")

        assert parse_config(format_config(config)) == config


class TestValidateConfig:
    """Test the preconditions checked before a run."""

    def test_default_is_valid(self) -> None:
        """Test that the defaults describe a runnable experiment."""
        validate_config(RunConfig())

    @pytest.mark.parametrize(
        "text, key",
        [
            ("geometry.N = 15", "geometry"),
            ("geometry.m = 2", "bundle"),
            ("tau = -1", "tau"),
            ("bundle.d = 0", "init.kind"),
            ("bundle.d = 0\ninit.kind = random\ninit.band_limit = 9", "init.band_limit"),
            ("init.kind = constant", "init.kind"),
            ("flow.dt_init = 1.0", "flow.dt_init"),
            ("flow.t_end = 0", "flow.t_end"),
            (
                "bundle.n = 2\nbundle.d = 0\ninit.kind = random\nflow.engine = metric",
                "flow.engine",
            ),
            ("monitors.max_principle = 0", "monitors.max_principle"),
            ("oracle.fd_eps = 0.1", "oracle.fd_eps"),
            ("output.record_every = 0", "output.record_every"),
        ],
    )
    def test_rejected(self, text: str, key: str) -> None:
        """Test that each failed precondition names its key."""
        with pytest.raises(ConfigError) as exc:
            validate_config(parse_config(text))

        assert exc.value.key == key

    def test_dt_at_cfl_bound(self) -> None:
        """Test that dt_init equal to the CFL bound is accepted."""
        config = RunConfig()
        bound = config.flow.cfl_factor * config.h_spacing**2

        validate_config(replace(config, flow=replace(config.flow, dt_init=bound)))


class TestLoadConfig:
    """Test reading config files from disk."""

    def test_load(self, write_config: Callable[..., Path], tmp_path: Path) -> None:
        """Test that load_config parses and validates a file."""
        path = write_config("tau = 3\ngeometry.N = 16")
        config = load_config(path)

        assert config.tau == 3.0
        assert config.output.directory == str(tmp_path / "out")

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test that an unreadable file raises ConfigError."""
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.cfg")

    def test_invalid_file(self, write_config: Callable[..., Path]) -> None:
        """Test that validation runs on load."""
        with pytest.raises(ConfigError):
            load_config(write_config("geometry.N = 7"))


class TestEnvironment:
    """Test KVF_THREADS and KVF_DEBUG."""

    def test_thread_limit(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test that KVF_THREADS fills unset runtime variables only."""
        monkeypatch.setenv(THREADS_ENV_VAR, "3")
        monkeypatch.setenv("MKL_NUM_THREADS", "1")
        monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
        monkeypatch.delenv("OPENBLAS_NUM_THREADS", raising=False)
        monkeypatch.delenv("NUMEXPR_NUM_THREADS", raising=False)

        assert apply_thread_limit() == 3
        assert os.environ["OMP_NUM_THREADS"] == "3"
        assert os.environ["MKL_NUM_THREADS"] == "1"

    @pytest.mark.parametrize("raw", ["", "zero", "0"])
    def test_thread_limit_ignored(self, raw: str, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test that empty or invalid values change nothing."""
        monkeypatch.setenv(THREADS_ENV_VAR, raw)

        assert apply_thread_limit() is None

    def test_debug_flag(self, monkeypatch: pytest.MonkeyPatch) -> None:
        """Test that only 'true' enables debug output."""
        monkeypatch.setenv(DEBUG_ENV_VAR, "TRUE")
        assert debug_enabled()
        monkeypatch.setenv(DEBUG_ENV_VAR, "1")
        assert not debug_enabled()
        monkeypatch.delenv(DEBUG_ENV_VAR)
        assert not debug_enabled()
