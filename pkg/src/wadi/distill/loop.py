"""Alternating distillation of a one-step generator from a frozen teacher."""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING

from wadi.autodiff.optim import AdamW
from wadi.autodiff.tensor import no_grad
from wadi.diffusion.datasets import cycle_labels
from wadi.diffusion.sampling import ddim_sample
from wadi.distill.metrics import eval_distribution
from wadi.distill.models import FakeModel, StudentGenerator
from wadi.distill.vsd import VSDBatch, fake_model_step, vsd_generator_step
from wadi.schemas.reports import MetricsRecord

if TYPE_CHECKING:
    from collections.abc import Iterable

    from wadi.autodiff.tensor import Array
    from wadi.diffusion.denoiser import Denoiser
    from wadi.diffusion.schedule import DiffusionSchedule
    from wadi.helpers.seeding import SeedStreams
    from wadi.schemas.config import DistillConfig

logger = logging.getLogger(__name__)


@dataclasses.dataclass(slots=True)
class DistillResult:
    student: StudentGenerator
    fake: FakeModel
    trace: list[MetricsRecord]
    reference: Array

    @property
    def final(self) -> MetricsRecord:
        return self.trace[-1]


def teacher_reference(
    teacher: Denoiser,
    schedule: DiffusionSchedule,
    config: DistillConfig,
    streams: SeedStreams,
) -> Array:
    """Multi-step teacher samples the student is measured against, one label cycle per class."""
    labels = cycle_labels(config.eval_samples, teacher.n_classes)
    return ddim_sample(
        teacher,
        schedule,
        config.teacher_sample_steps,
        config.cfg_scale,
        labels,
        streams.generator("teacher-reference"),
    )


def distill(  # noqa: PLR0913
    teacher: Denoiser,
    schedule: DiffusionSchedule,
    config: DistillConfig,
    streams: SeedStreams,
    *,
    modes: Array | None = None,
    adapt_layers: Iterable[str] | None = None,
    reference: Array | None = None,
    steps: int | None = None,
) -> DistillResult:
    """Train a one-step student against ``teacher``.

    Every generator update is preceded by ``config.ratio`` fake-model updates. Metrics are
    recorded before training and after every ``config.eval_interval`` generator updates.

    Args:
        teacher: Frozen multi-step denoiser.
        schedule: Noise schedule shared by all models.
        config: Distillation settings.
        streams: Random streams of the run.
        modes: Reference modes for coverage.
        adapt_layers: Layers receiving adapters, all when unset.
        reference: Teacher samples to compare against, drawn once when unset.
        steps: Generator updates, ``config.total_steps`` when unset.

    Raises:
        NonFiniteGradientError: If a generator gradient becomes non-finite.
        DivergenceError: If the fake-model loss becomes non-finite.
    """
    layers = None if adapt_layers is None else list(adapt_layers)
    init_rng = streams.generator("init")
    student = StudentGenerator.from_teacher(teacher, schedule, config.adapter_kind, config.r_student, init_rng, layers=layers)
    fake = FakeModel.from_teacher(teacher, config.adapter_kind, config.r_fake, init_rng, layers=layers)
    student_optimizer = AdamW(student.trainable_parameters(), lr=config.lr_student, weight_decay=config.weight_decay)
    fake_optimizer = AdamW(fake.trainable_parameters(), lr=config.lr_fake, weight_decay=config.weight_decay)

    if reference is None:
        reference = teacher_reference(teacher, schedule, config, streams)
    eval_labels = cycle_labels(reference.shape[0], teacher.n_classes)
    eval_noise = streams.generator("eval").standard_normal((reference.shape[0], 2))

    data_rng = streams.generator("data")
    noise_rng = streams.generator("noise")
    t_rng = streams.generator("t-sampling")
    t_range = config.t_range(schedule.timesteps)

    def next_batch() -> VSDBatch:
        return VSDBatch.draw(
            n=config.batch_size,
            n_classes=teacher.n_classes,
            t_range=t_range,
            data_rng=data_rng,
            noise_rng=noise_rng,
            t_rng=t_rng,
        )

    def evaluate(step: int, gen_loss: float, fake_loss: float) -> MetricsRecord:
        metrics = eval_distribution(student.sample(eval_noise, eval_labels), reference, modes)
        record = MetricsRecord(step=step, gen_loss=gen_loss, fake_loss=fake_loss, **metrics.model_dump())
        logger.info(
            "Step %d: generator loss %.4g, fake loss %.4g, W2 %.4f",
            step,
            gen_loss,
            fake_loss,
            record.w2,
            extra=record.model_dump(),
        )
        return record

    total = config.total_steps if steps is None else steps
    with no_grad():
        initial = next_batch()
        fake_loss = fake_model_step(fake, student, initial, None)
        gen_loss = vsd_generator_step(student, fake, teacher, initial, None, cfg_scale=config.cfg_scale, mode=config.weighting)
    trace = [evaluate(0, gen_loss, fake_loss)]

    for step in range(1, total + 1):
        for _ in range(config.ratio):
            fake_loss = fake_model_step(fake, student, next_batch(), fake_optimizer, step=step)
        gen_loss = vsd_generator_step(
            student,
            fake,
            teacher,
            next_batch(),
            student_optimizer,
            cfg_scale=config.cfg_scale,
            mode=config.weighting,
        )
        if step % config.eval_interval == 0:
            trace.append(evaluate(step, gen_loss, fake_loss))

    return DistillResult(student=student, fake=fake, trace=trace, reference=reference)
