from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest

from nrv2x.config import SimConfig, validate_config


_CRITERIA: dict[int, str] = {}


def record_criterion(n: int, line: str) -> None:
    _CRITERIA[n] = line


def pytest_terminal_summary(terminalreporter) -> None:
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])


def small_config(**overrides: Any) -> SimConfig:
    """A short, light highway run; nested dicts are merged one level deep."""
    base: dict[str, Any] = {
        "dropping": {"num_vehicles": 20},
        "duration_s": 1.0,
        "warmup_s": 0.0,
        "seed": 11,
    }
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return validate_config(base)


@pytest.fixture
def write_config(tmp_path: Path):
    def _write(payload: Any, name: str = "cfg.json") -> Path:
        path = tmp_path / name
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
        return path

    return _write
