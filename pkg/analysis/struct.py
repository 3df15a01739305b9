import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, model_validator

from dynamics.struct import State

LOG_DENSITY_EPS = 0.5


class Method(Enum):
    TangentGrowth = "tangent"
    FKAverage = "fk"


class LyapunovEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_hat: float
    total_time: FiniteFloat
    tau: FiniteFloat = Field(gt=0.0)
    burn_in_time: FiniteFloat = Field(ge=0.0)
    std_error: float = Field(ge=0.0)
    method: Method

    @model_validator(mode="after")
    def _burn_in_inside_run(self) -> "LyapunovEstimate":
        if not self.total_time > self.burn_in_time:
            raise ValueError(f"total time {self.total_time} must exceed burn-in {self.burn_in_time}")
        return self

    def separated_from_zero(self, n_se: float = 2.0) -> bool:
        return abs(self.lambda_hat) > n_se * self.std_error


class LyapunovScan(BaseModel):
    """Tangent, FK and gap estimates taken from one pass over a trajectory."""
    model_config = ConfigDict(frozen=True)

    tangent: LyapunovEstimate
    fk: LyapunovEstimate
    gap: float
    final_state: State


class EnsembleSnapshot(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time: float
    points: np.ndarray
    diameter: float = Field(ge=0.0)
    mean: State
    dropped: int = 0

    @property
    def size(self) -> int:
        return int(self.points.shape[0])


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    x_min: FiniteFloat = -3.0
    x_max: FiniteFloat = 3.0
    y_min: FiniteFloat = -3.0
    y_max: FiniteFloat = 3.0
    nx: int = Field(default=512, ge=1)
    ny: int = Field(default=512, ge=1)
    auto: bool = False

    @model_validator(mode="after")
    def _ordered(self) -> "GridSpec":
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"grid bounds must be ordered, got x=[{self.x_min}, {self.x_max}] y=[{self.y_min}, {self.y_max}]")
        return self

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return self.x_min, self.x_max, self.y_min, self.y_max


class HistogramGrid(BaseModel):
    """Counts of an ensemble snapshot on a regular grid; counts[i, j] is column i (x) and row j (y)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int
    counts: np.ndarray
    out_of_bounds: int = Field(ge=0)
    total: int = Field(ge=0)
    time: Optional[float] = None

    @model_validator(mode="after")
    def _mass_conserved(self) -> "HistogramGrid":
        if self.counts.shape != (self.nx, self.ny):
            raise ValueError(f"counts shape {self.counts.shape} does not match grid {self.nx}x{self.ny}")
        if int(self.counts.sum()) + self.out_of_bounds != self.total:
            raise ValueError("histogram counts plus out-of-bounds must equal the ensemble size")
        return self

    def log_density(self) -> np.ndarray:
        """log10((count + 0.5) / total) per cell."""
        return np.log10((self.counts + LOG_DENSITY_EPS) / max(self.total, 1))

    def occupied_cells(self) -> int:
        return int(np.count_nonzero(self.counts))

    def meta(self) -> Dict[str, Any]:
        return {
            "bounds": [self.x_min, self.x_max, self.y_min, self.y_max],
            "nx": self.nx,
            "ny": self.ny,
            "total": self.total,
            "out_of_bounds": self.out_of_bounds,
            "time": self.time,
        }


class SweepResult(BaseModel):
    """lambda_matrix[i, j] is the estimate at alpha_grid[i], b_grid[j]; failed cells hold NaN."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha_grid: List[float]
    b_grid: List[float]
    lambda_matrix: np.ndarray
    std_errors: np.ndarray
    tau: float
    T: float
    seed: int
    border: List[Tuple[float, float]] = []
    failed: List[Tuple[int, int, str]] = []

    @model_validator(mode="after")
    def _shape(self) -> "SweepResult":
        shape = (len(self.alpha_grid), len(self.b_grid))
        if self.lambda_matrix.shape != shape or self.std_errors.shape != shape:
            raise ValueError(f"sweep matrices must have shape {shape}")
        return self


class ConvergenceReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau_list: List[float]
    rms_errors_state: List[float]
    rms_errors_direction: List[float]
    fitted_order_state: float
    fitted_order_direction: float
    seeds: int
    tau_reference: float


class CheckResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    value: float
    threshold: float
    samples: int
    passed: bool

    @classmethod
    def below(cls, name: str, value: float, threshold: float, samples: int) -> "CheckResult":
        return cls(name=name, value=value, threshold=threshold, samples=samples,
                   passed=math.isfinite(value) and value < threshold)

    @classmethod
    def above(cls, name: str, value: float, threshold: float, samples: int) -> "CheckResult":
        return cls(name=name, value=value, threshold=threshold, samples=samples,
                   passed=math.isfinite(value) and value > threshold)
