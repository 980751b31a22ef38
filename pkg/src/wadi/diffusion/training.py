"""Denoising training of the noise predictor."""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING

import numpy as np

from wadi import exceptions
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.optim import AdamW
from wadi.autodiff.tensor import Tensor, numpy_dtype
from wadi.diffusion.schedule import q_sample

if TYPE_CHECKING:
    from wadi.autodiff.tensor import Array
    from wadi.diffusion.datasets import ToyDataset
    from wadi.diffusion.denoiser import Denoiser
    from wadi.diffusion.schedule import DiffusionSchedule
    from wadi.helpers.seeding import SeedStreams

logger = logging.getLogger(__name__)


class DivergenceError(exceptions.NumericError):
    """Training loss became non-finite."""

    def __init__(self, *, step: int, loss: float, what: str = "loss") -> None:
        self.step = step
        self.loss = loss
        super().__init__(f"{what} became non-finite ({loss}) at step {step}")


def denoising_loss(
    model: Denoiser,
    schedule: DiffusionSchedule,
    x0: Array,
    labels: Array,
    t: Array,
    eps: Array,
) -> Tensor:
    """Mean squared error between the predicted and the true noise of ``q_sample(x0, t, eps)``."""
    dtype = numpy_dtype(model.dtype)
    z = q_sample(schedule, x0, t, eps)
    prediction = model.forward(Tensor(z.T.astype(dtype), dtype=model.dtype), t, labels)
    return F.mse(prediction, Tensor(eps.T.astype(dtype), dtype=model.dtype))


def train_denoiser(  # noqa: PLR0913
    model: Denoiser,
    data: ToyDataset,
    schedule: DiffusionSchedule,
    streams: SeedStreams,
    *,
    steps: int,
    lr: float,
    batch_size: int = 256,
    cond_drop_prob: float = 0.1,
    weight_decay: float = 0.0,
    log_every: int = 500,
) -> list[float]:
    """Fit ``model`` to predict the noise added to ``data``.

    Timesteps are uniform in ``[1, T]`` and each label is replaced by the null token with
    probability ``cond_drop_prob``.

    Returns:
        The loss of every step.

    Raises:
        DivergenceError: If the loss becomes non-finite.
    """
    data_rng = streams.generator("data")
    noise_rng = streams.generator("noise")
    t_rng = streams.generator("t-sampling")
    optimizer = AdamW(model.trainable_parameters(), lr=lr, weight_decay=weight_decay)

    trace: list[float] = []
    for step in range(steps):
        index = data_rng.integers(0, len(data), size=batch_size)
        drop = data_rng.random(batch_size) < cond_drop_prob
        labels = np.where(drop, model.null_label, data.labels[index])
        t = t_rng.integers(1, schedule.timesteps + 1, size=batch_size)
        eps = noise_rng.standard_normal((batch_size, data.points.shape[1]))

        loss = denoising_loss(model, schedule, data.points[index], labels, t, eps)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(step=step, loss=value)

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        trace.append(value)

        if (step + 1) % log_every == 0:
            recent = float(np.mean(trace[-log_every:]))
            logger.info("Step %d: loss %.4f", step + 1, recent, extra={"step": step + 1, "loss": recent})

    return trace
