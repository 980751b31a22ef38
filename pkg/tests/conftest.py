from __future__ import annotations

import sysconfig
from typing import TYPE_CHECKING

import numpy as np
import pytest

from wadi.diffusion.schedule import make_schedule
from wadi.schemas.config import ModelConfig

if TYPE_CHECKING:
    from collections.abc import Callable

    from wadi.diffusion.schedule import DiffusionSchedule


def pytest_report_header(config: pytest.Config) -> list[str]:  # noqa: ARG001
    """Return a list of strings to be displayed in the header of the report."""
    is_freethreaded = bool(sysconfig.get_config_var("Py_GIL_DISABLED"))

    return [
        f"Free-threaded: {is_freethreaded}",
        f"NumPy: {np.__version__}",
    ]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def tiny_model_config() -> ModelConfig:
    """A denoiser small enough for per-test training."""
    return ModelConfig(hidden_width=8, hidden_layers=2, time_embed_dim=4, cond_embed_dim=3)


@pytest.fixture(scope="session")
def schedule() -> DiffusionSchedule:
    return make_schedule(timesteps=20, beta_start=1e-3, beta_end=0.2)


type ScalarFn = Callable[[np.ndarray], float]


def _central_differences(fn: ScalarFn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x, dtype=np.float64)
    for index in np.ndindex(x.shape):
        plus = x.astype(np.float64, copy=True)
        minus = x.astype(np.float64, copy=True)
        plus[index] += step
        minus[index] -= step
        grad[index] = (fn(plus) - fn(minus)) / (2 * step)
    return grad


@pytest.fixture(scope="session")
def numeric_grad() -> Callable[[ScalarFn, np.ndarray], np.ndarray]:
    """Central finite differences of a scalar function, step 1e-6."""
    return _central_differences
