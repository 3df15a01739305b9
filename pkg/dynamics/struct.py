import math
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat


class HopfError(Exception):
    """Base class for every error raised by the toolkit."""


class StepSizeError(HopfError, ValueError):
    def __init__(self, tau: float, limit: float):
        self.tau = tau
        self.limit = limit
        super().__init__(f"step size tau={tau:g} is not admissible, must satisfy 0 < tau < {limit:g}")


class NonConvergence(HopfError):
    def __init__(self, residual: float, step: Optional[int] = None, point: Optional[int] = None):
        self.residual = residual
        self.step = step
        self.point = point
        where = []
        if step is not None:
            where.append(f"step {step}")
        if point is not None:
            where.append(f"point {point}")
        at = f" at {', '.join(where)}" if where else ""
        super().__init__(f"Newton iteration did not converge{at}, last residual {residual:.3e}")


class SingularTangentMatrix(HopfError):
    def __init__(self, det: float, step: Optional[int] = None):
        self.det = det
        self.step = step
        super().__init__(f"tangent matrix is singular (det={det:.3e})")


class SignAmbiguous(HopfError):
    def __init__(self, b: float, lambda_hat: float, std_error: float):
        self.b = b
        self.lambda_hat = lambda_hat
        self.std_error = std_error
        super().__init__(
            f"sign of lambda at b={b:g} is ambiguous: {lambda_hat:.4g} +- {std_error:.2g}, increase T"
        )


class AcceptanceFailure(HopfError):
    def __init__(self, failed: Sequence[str]):
        self.failed = list(failed)
        super().__init__(f"{len(self.failed)} acceptance check(s) failed: {', '.join(self.failed)}")


class ModelParams(BaseModel):
    """Coefficients of the stochastic Hopf normal form.

    alpha is the linear growth rate, beta the rotation, a the cubic damping,
    b the shear strength and sigma the additive noise amplitude.
    """
    model_config = ConfigDict(frozen=True)

    alpha: FiniteFloat = 1.0
    beta: FiniteFloat = 1.0
    a: FiniteFloat = Field(default=1.0, gt=0.0)
    b: FiniteFloat = 1.0
    sigma: FiniteFloat = Field(default=1.0, ge=0.0)

    def unpack(self) -> Tuple[float, float, float, float, float]:
        return self.alpha, self.beta, self.a, self.b, self.sigma


class State(NamedTuple):
    x: float
    y: float

    @property
    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    @classmethod
    def of(cls, v) -> "State":
        x, y = v
        return cls(float(x), float(y))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


class Mat2(NamedTuple):
    """2x2 matrix in row-major order."""
    m11: float
    m12: float
    m21: float
    m22: float

    @property
    def det(self) -> float:
        return self.m11 * self.m22 - self.m12 * self.m21

    def as_array(self) -> np.ndarray:
        return np.array([[self.m11, self.m12], [self.m21, self.m22]])


class PolarState(NamedTuple):
    gamma: float
    phi: float
    psi: float


class TangentFrame(NamedTuple):
    """Unit tangent direction plus the accumulated log of its norm."""
    c: float
    s: float
    log_growth: float = 0.0

    @property
    def xi(self) -> float:
        return math.atan2(self.s, self.c) % math.pi

    @classmethod
    def from_direction(cls, u, log_growth: float = 0.0) -> "TangentFrame":
        ux, uy = float(u[0]), float(u[1])
        r = math.hypot(ux, uy)
        if not r > 0.0 or not math.isfinite(r):
            raise ValueError(f"tangent direction must be a finite non-zero vector, got ({ux}, {uy})")
        return cls(ux / r, uy / r, log_growth)


class StepConfig(BaseModel):
    """Step size and Newton controls, validated against a ModelParams."""
    model_config = ConfigDict(frozen=True)

    tau: FiniteFloat = Field(gt=0.0)
    newton_tol: FiniteFloat = Field(default=1e-12, gt=0.0)
    newton_max_iter: int = Field(default=50, ge=1)

    @classmethod
    def admissible(cls, params: ModelParams, tau: float, **kwargs) -> "StepConfig":
        cfg = cls(tau=tau, **kwargs)
        cfg.check(params)
        return cfg

    def check(self, params: ModelParams) -> None:
        from dynamics.model import max_stable_step

        limit = max_stable_step(params)
        if not self.tau < limit:
            raise StepSizeError(self.tau, limit)
