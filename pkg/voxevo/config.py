"""Run configuration: one JSON file plus command-line overrides."""

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
import json
import logging
import os

from pydantic import BaseModel, Field, ValidationError, field_validator

from .advisor import AdvisorSettings
from .errors import ConfigError
from .genome import DEFAULT_HIDDEN, EncodingSpec
from .models import HyperParams
from .morphology import DEFAULT_DIMS, MaterialTable
from .physics import SimConfig

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    seed: int = 0
    generations: int = Field(default=100, ge=0)
    population: int = Field(default=30, ge=1)
    dims: Tuple[int, int, int] = DEFAULT_DIMS
    repetitions: int = Field(default=3, ge=1)
    hyperparams: HyperParams = Field(default_factory=HyperParams)
    sim: SimConfig = Field(default_factory=SimConfig)
    encoding: EncodingSpec = Field(default_factory=EncodingSpec)
    hidden: List[int] = Field(default_factory=lambda: list(DEFAULT_HIDDEN))
    materials: MaterialTable = Field(default_factory=MaterialTable)
    advisor: AdvisorSettings = Field(default_factory=AdvisorSettings)
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    out_dir: str = "runs"
    checkpoint_every: int = Field(default=1, ge=1)
    trajectory_stride: int = Field(default=0, ge=0)
    # keep wall_time out of curves.csv so same-seed runs compare byte for byte
    reproducible_curves: bool = True

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(n < 1 for n in value):
            raise ValueError("grid dims must be positive")
        return value

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, value: List[int]) -> List[int]:
        if any(n < 1 for n in value):
            raise ValueError("hidden widths must be >= 1")
        return value


def _field_path(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error.get("loc", ()))


def validate_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_field_path(first), first.get("msg", "invalid value")) from e


def _set_path(data: Dict[str, Any], path: str, value: Any) -> None:
    node = data
    parts = path.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read the config file (if any) and apply dotted-path overrides on top"""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError("--config", f"{path} does not exist") from e
        except json.JSONDecodeError as e:
            raise ConfigError("--config", f"{path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("--config", "top level must be an object")

    for key, value in (overrides or {}).items():
        if value is not None:
            _set_path(data, key, value)

    config = validate_config(data)
    logger.debug(f"Loaded config: {config.model_dump_json()}")
    return config
