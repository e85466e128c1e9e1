"""Data models shared by the GA, the advisor and the run artifacts."""

from typing import Dict, List, Optional, Tuple
import math

from pydantic import BaseModel, ConfigDict, Field, field_validator

# (low, high) for every clamped hyperparameter
HYPERPARAM_RANGES: Dict[str, Tuple[float, float]] = {
    "mutation_rate": (0.001, 1.0),
    "mutation_scale": (0.001, 1.0),
    "crossover_rate": (0.0, 1.0),
    "elite_fraction": (0.05, 0.9),
}
MULTIPLIER_RANGE = (0.1, 10.0)
MULTIPLIER_KEYS = ("muscle_expand", "muscle_contract", "soft_tissue", "hard_bone")


def clamp(value: float, low: float, high: float) -> float:
    if not math.isfinite(value):
        raise ValueError(f"{value!r} is not a finite number")
    return min(max(float(value), low), high)


class HyperParams(BaseModel):
    """GA hyperparameters; every write is clamped into its range"""

    model_config = ConfigDict(validate_assignment=True)

    mutation_rate: float = 0.1
    mutation_scale: float = 0.1
    crossover_rate: float = 0.4
    elite_fraction: float = 0.3
    material_multipliers: Optional[Dict[str, float]] = None

    @field_validator("mutation_rate", "mutation_scale", "crossover_rate", "elite_fraction")
    @classmethod
    def _clamp(cls, value: float, info) -> float:
        low, high = HYPERPARAM_RANGES[info.field_name]
        return clamp(value, low, high)

    @field_validator("material_multipliers")
    @classmethod
    def _clamp_multipliers(cls, value: Optional[Dict[str, float]]) -> Optional[Dict[str, float]]:
        if value is None:
            return None
        unknown = set(value) - set(MULTIPLIER_KEYS)
        if unknown:
            raise ValueError(f"unknown materials {sorted(unknown)}")
        return {key: clamp(value[key], *MULTIPLIER_RANGE) for key in sorted(value)}


CURVES_COLUMNS: List[str] = [
    "generation", "mutation_rate", "mutation_scale", "crossover_rate", "elite_fraction",
    "best", "mean", "std", "diversity", "evaluations", "wall_time",
]


class GenerationReport(BaseModel):
    generation: int = Field(ge=0)
    params: HyperParams
    best_fitness: float
    mean_fitness: float
    std_fitness: float = Field(ge=0)
    diversity: float = Field(ge=0, le=1)
    evaluations: int = Field(ge=0)
    wall_time: float = Field(ge=0)

    def to_row(self, wall_time: Optional[float] = None) -> Dict[str, float]:
        return {
            "generation": self.generation,
            "mutation_rate": self.params.mutation_rate,
            "mutation_scale": self.params.mutation_scale,
            "crossover_rate": self.params.crossover_rate,
            "elite_fraction": self.params.elite_fraction,
            "best": self.best_fitness,
            "mean": self.mean_fitness,
            "std": self.std_fitness,
            "diversity": self.diversity,
            "evaluations": self.evaluations,
            "wall_time": self.wall_time if wall_time is None else wall_time,
        }
