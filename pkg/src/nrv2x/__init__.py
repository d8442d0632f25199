"""NR V2X sidelink mode-2 system-level simulator."""

from .config import ConfigError, SimConfig, load_config, validate_config
from .engine import Engine, RunResult, run

__all__ = ["ConfigError", "Engine", "RunResult", "SimConfig", "load_config", "run", "validate_config"]
__version__ = "0.1.0"
