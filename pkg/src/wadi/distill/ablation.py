"""Adapter-type and rank sweeps over the distillation loop."""

from __future__ import annotations

import concurrent.futures
import logging
import threading
from typing import TYPE_CHECKING

import numpy as np
import pydantic

from wadi import enums, exceptions
from wadi.analysis import WeightSnapshot, drift_stats
from wadi.distill.loop import distill, teacher_reference
from wadi.distill.models import FakeModel, StudentGenerator
from wadi.schemas.reports import AblationRow

if TYPE_CHECKING:
    from collections.abc import Iterable

    from wadi.autodiff.tensor import Array
    from wadi.diffusion.denoiser import Denoiser
    from wadi.diffusion.schedule import DiffusionSchedule
    from wadi.helpers.seeding import SeedStreams
    from wadi.schemas.config import AblationConfig, DistillConfig

logger = logging.getLogger(__name__)


def ablation_cells(base: DistillConfig, ablation: AblationConfig) -> list[tuple[str, DistillConfig]]:
    """One cell per adapter kind at the base ranks, then the LoRaD rank sweep sorted by rank."""
    cells = [(str(kind), base.model_copy(update={"adapter_kind": kind})) for kind in ablation.kinds]
    cells.extend(
        (
            f"r{r_student}-f{r_fake}",
            base.model_copy(update={"adapter_kind": enums.AdapterKindEnum.lorad, "r_student": r_student, "r_fake": r_fake}),
        )
        for r_student, r_fake in sorted(ablation.rank_grid)
    )
    return cells


def _param_counts(
    teacher: Denoiser,
    schedule: DiffusionSchedule,
    config: DistillConfig,
    layers: list[str] | None,
) -> tuple[int, int]:
    rng = np.random.default_rng(0)
    student = StudentGenerator.from_teacher(teacher, schedule, config.adapter_kind, config.r_student, rng, layers=layers)
    fake = FakeModel.from_teacher(teacher, config.adapter_kind, config.r_fake, rng, layers=layers)
    return student.denoiser.param_count(), fake.denoiser.param_count()


def ablate(  # noqa: PLR0913
    teacher: Denoiser,
    schedule: DiffusionSchedule,
    base: DistillConfig,
    ablation: AblationConfig,
    streams: SeedStreams,
    *,
    modes: Array | None = None,
    adapt_layers: Iterable[str] | None = None,
    reference: Array | None = None,
) -> list[AblationRow]:
    """Distill once per cell with shared seeds and teacher reference.

    A failing cell is recorded with its error message; the other cells still run.
    """
    layers = None if adapt_layers is None else list(adapt_layers)
    cells = ablation_cells(base, ablation)
    if reference is None:
        reference = teacher_reference(teacher, schedule, base, streams)
    teacher_snapshot = WeightSnapshot.from_named_tensors(teacher.state())
    completed: dict[int, AblationRow] = {}
    lock = threading.Lock()

    def run(index: int, setting: str, config: DistillConfig) -> None:
        row = AblationRow(
            setting=setting,
            kind=config.adapter_kind,
            r_student=config.r_student,
            r_fake=config.r_fake,
            params_student=0,
            params_fake=0,
        )
        try:
            params_student, params_fake = _param_counts(teacher, schedule, config, layers)
            row = row.model_copy(update={"params_student": params_student, "params_fake": params_fake})
            result = distill(
                teacher,
                schedule,
                config,
                streams,
                modes=modes,
                adapt_layers=layers,
                reference=reference,
                steps=ablation.steps,
            )
            student_snapshot = WeightSnapshot.from_named_tensors(result.student.denoiser.state())
            drift = drift_stats(student_snapshot, teacher_snapshot)
            row = row.model_copy(
                update={
                    "w2": result.final.w2,
                    "mmd": result.final.mmd,
                    "coverage": result.final.coverage,
                    "nm": drift.norm_mean,
                    "dm": drift.direction_mean,
                },
            )
        except (exceptions.WadiError, pydantic.ValidationError) as e:
            logger.warning("Ablation cell %s failed: %s", setting, e, extra={"setting": setting})
            row = row.model_copy(update={"error": str(e)})

        with lock:
            completed[index] = row

    with concurrent.futures.ThreadPoolExecutor(max_workers=ablation.workers) as executor:
        futures = [executor.submit(run, i, setting, config) for i, (setting, config) in enumerate(cells)]
        for future in futures:
            future.result()

    return [completed[i] for i in range(len(cells))]
