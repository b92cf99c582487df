"""
Run configuration for solvers, simulations and output
Flat key=value files parsed with python-dotenv; flags override file values
"""
import os
import logging
from pathlib import Path
from typing import Dict, Optional, Literal

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError

from rankselect.errors import DomainError

logger = logging.getLogger(__name__)

# Environment detection
ENVIRONMENT = os.getenv("ENVIRONMENT", "development")
IS_PRODUCTION = ENVIRONMENT == "production"

CONFIG_ENV_VAR = "RANKSELECT_CONFIG"


# ============================================================================
# SETTINGS MODELS
# ============================================================================

class QuadratureSettings(BaseModel):
    abs_tol: float = Field(1e-10, gt=0)
    rel_tol: float = Field(1e-10, gt=0)
    max_subdivisions: int = Field(200, ge=10)


class RootSettings(BaseModel):
    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(200, ge=1)


class MonteCarloSettings(BaseModel):
    replications: int = Field(100_000, ge=1)
    seed: int = Field(20240101, ge=0)
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)


class OutputSettings(BaseModel):
    path: str = "-"
    format: Literal["csv"] = "csv"


class RunConfig(BaseModel):
    quadrature: QuadratureSettings = Field(default_factory=QuadratureSettings)
    root: RootSettings = Field(default_factory=RootSettings)
    mc: MonteCarloSettings = Field(default_factory=MonteCarloSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)


# flat file key -> (section, field)
FLAT_KEYS = {
    "abs_tol": ("quadrature", "abs_tol"),
    "rel_tol": ("quadrature", "rel_tol"),
    "max_subdivisions": ("quadrature", "max_subdivisions"),
    "root_tol": ("root", "tol"),
    "root_max_iter": ("root", "max_iter"),
    "replications": ("mc", "replications"),
    "seed": ("mc", "seed"),
    "workers": ("mc", "workers"),
    "output_path": ("output", "path"),
    "output_format": ("output", "format"),
}


def build_run_config(values: Dict[str, Optional[str]]) -> RunConfig:
    """
    Build a RunConfig from flat key/value pairs

    Args:
        values: flat mapping using the keys in FLAT_KEYS; None values are skipped

    Returns:
        Validated RunConfig

    Raises:
        DomainError: unknown key or value failing validation
    """
    nested: Dict[str, Dict[str, str]] = {}
    for key, value in values.items():
        if value is None:
            continue
        if key not in FLAT_KEYS:
            raise DomainError(f"Unknown config key: {key}")
        section, field = FLAT_KEYS[key]
        nested.setdefault(section, {})[field] = value

    try:
        return RunConfig.model_validate(nested)
    except ValidationError as e:
        raise DomainError(f"Invalid configuration: {e}") from e


class ConfigLoader:
    """Config loader - reads a flat key=value file once and caches the parsed values"""

    def __init__(self):
        self._cache: Dict[str, Dict[str, Optional[str]]] = {}

    def resolve_path(self, explicit: Optional[str] = None) -> Optional[Path]:
        """Flag first, then the RANKSELECT_CONFIG env var, else no file"""
        candidate = explicit or os.getenv(CONFIG_ENV_VAR)
        if not candidate:
            return None
        path = Path(candidate)
        if not path.is_file():
            raise DomainError(f"Config file not found: {path}")
        return path

    def read_file(self, path: Path) -> Dict[str, Optional[str]]:
        key = str(path.resolve())
        if key in self._cache:
            return self._cache[key]

        values = dict(dotenv_values(path))
        self._cache[key] = values
        logger.info(f"✅ Loaded config file: {path} ({len(values)} keys)")
        return values

    def load(self, explicit: Optional[str] = None,
             overrides: Optional[Dict[str, Optional[str]]] = None) -> RunConfig:
        """
        Load the run configuration

        Args:
            explicit: config path given on the command line
            overrides: flat values from flags; they win over the file

        Returns:
            RunConfig with defaults for anything unset
        """
        values: Dict[str, Optional[str]] = {}
        path = self.resolve_path(explicit)
        if path is not None:
            values.update(self.read_file(path))
        else:
            logger.debug("No config file, using defaults")

        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = str(value)

        return build_run_config(values)

    def clear(self):
        self._cache.clear()


# Global loader instance
config_loader = ConfigLoader()


def get_run_config(explicit: Optional[str] = None,
                   overrides: Optional[Dict[str, Optional[str]]] = None) -> RunConfig:
    """Get the run configuration"""
    return config_loader.load(explicit, overrides)
