"""Shared fixtures for the acceptance runs.

The long flows are driven through the ``kvf`` commands once per session and
the tests read back their artifacts. Every example config under ``configs/``
is rewritten with its output directory moved into a temporary directory.
"""

import os
from collections.abc import Callable
from dataclasses import replace
from pathlib import Path

import pytest
from typer.testing import CliRunner

from vortex_flow.cli import app
from vortex_flow.config import RunConfig, format_config, load_config

# Skip all integration tests unless explicitly enabled
pytestmark = pytest.mark.skipif(
    not os.getenv("RUN_INTEGRATION_TESTS"),
    reason="Integration tests only run when RUN_INTEGRATION_TESTS is set",
)

PROJECT_ROOT = Path(__file__).parent.parent.parent
CONFIG_DIR = PROJECT_ROOT / "configs"

CommandRunner = Callable[..., Path]


def example_config(name: str) -> RunConfig:
    return load_config(CONFIG_DIR / f"{name}.cfg")


@pytest.fixture(scope="session")
def load_example() -> Callable[[str], RunConfig]:
    """Load ``configs/<name>.cfg``."""
    return example_config


@pytest.fixture(scope="session")
def kvf(tmp_path_factory: pytest.TempPathFactory) -> CommandRunner:
    """Run a kvf command on an example config and return its output directory.

    Results are cached per (command, config), so the expensive flows run once
    no matter how many tests read their artifacts.
    """
    runner = CliRunner()
    cache: dict[tuple[str, str], Path] = {}

    def _invoke(command: str, name: str, expected_exit: int = 0) -> Path:
        key = (command, name)
        if key in cache:
            return cache[key]
        workdir = tmp_path_factory.mktemp(f"{command}-{name}")
        config = example_config(name)
        config = replace(
            config, output=replace(config.output, directory=str(workdir / "out"))
        )
        path = workdir / f"{name}.cfg"
        path.write_text(format_config(config))

        result = runner.invoke(app, [command, "--config", str(path)])
        assert result.exit_code == expected_exit, result.output
        cache[key] = workdir / "out"
        return cache[key]

    return _invoke
