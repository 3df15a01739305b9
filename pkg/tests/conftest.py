import logfire
import numpy as np
import pytest

from dynamics.noise import NoisePath
from dynamics.rds import CocycleContext
from dynamics.struct import ModelParams, StepConfig

logfire.configure(send_to_logfire=False, console=False)


@pytest.fixture
def params() -> ModelParams:
    return ModelParams(alpha=1.0, beta=1.0, a=1.0, b=1.0, sigma=1.0)


@pytest.fixture
def shear_params() -> ModelParams:
    return ModelParams(alpha=1.0, beta=1.0, a=1.0, b=10.0, sigma=1.0)


@pytest.fixture
def cfg(params) -> StepConfig:
    return StepConfig.admissible(params, 1e-3)


@pytest.fixture
def path() -> NoisePath:
    return NoisePath(seed=0x5EED, tau=1e-3)


@pytest.fixture
def ctx(shear_params) -> CocycleContext:
    return CocycleContext.build(shear_params, 1e-3, seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


def random_states(rng: np.random.Generator, n: int, radius: float = 3.0) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])
