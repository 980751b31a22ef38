"""Command-line entry point of the experiments."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import logging.config
import sys
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any, assert_never

import numpy as np
import pydantic

from wadi import checkpoint, enums, exceptions
from wadi.analysis import WeightSnapshot, direction_energy, drift_stats, swap_components
from wadi.diffusion.datasets import cycle_labels, make_dataset
from wadi.diffusion.denoiser import Denoiser
from wadi.diffusion.sampling import ddim_sample
from wadi.diffusion.schedule import make_schedule
from wadi.diffusion.training import train_denoiser
from wadi.distill.ablation import ablate
from wadi.distill.loop import distill
from wadi.distill.metrics import eval_distribution
from wadi.distill.models import StudentGenerator
from wadi.helpers.seeding import SeedStreams
from wadi.schemas.config import load_config
from wadi.schemas.reports import (
    AblationRow,
    DistillSummary,
    DriftRecord,
    LossRecord,
    MetricsRecord,
    TeacherSummary,
    write_csv,
    write_records,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from wadi.autodiff.tensor import Array
    from wadi.diffusion.datasets import Normalization, ToyDataset
    from wadi.diffusion.schedule import DiffusionSchedule
    from wadi.schemas.config import RunConfig

logger = logging.getLogger(__name__)

EXIT_CODES: list[tuple[type[exceptions.WadiError], int]] = [
    (exceptions.BadParameterError, 2),
    (exceptions.MismatchError, 3),
    (exceptions.NumericError, 4),
    (exceptions.NotFoundError, 5),
]
INVALID_CONFIG_EXIT_CODE = 2

TEACHER_COVERAGE_THRESHOLD = 0.02
SAMPLE_COLUMNS = ("x", "y", "label")
ENERGY_COLUMNS = ("rank", "sigma", "cumulative_energy")


class InvalidLabelError(exceptions.BadParameterError):
    def __init__(self, *, label: int, n_classes: int) -> None:
        super().__init__(f"label must lie in [0, {n_classes}] ({n_classes} is unconditional), got {label}")


@dataclasses.dataclass(frozen=True, slots=True)
class OutputLayout:
    """Fixed artifact locations under the output directory."""

    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def prepare(self, config: RunConfig) -> None:
        for directory in (self.checkpoints, self.metrics, self.reports):
            directory.mkdir(parents=True, exist_ok=True)
        self.config.write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")


def configure_logging(level: str) -> None:
    """Apply the packaged JSON logging configuration at ``level``."""
    config = json.loads(resources.files("wadi").joinpath("log_config.json").read_text(encoding="utf-8"))
    config["loggers"][""]["level"] = level
    logging.config.dictConfig(config)


def exit_code(error: exceptions.WadiError) -> int:
    for category, code in EXIT_CODES:
        if isinstance(error, category):
            return code
    return 1


def _write_json(path: Path, report: pydantic.BaseModel | Sequence[pydantic.BaseModel]) -> None:
    if isinstance(report, pydantic.BaseModel):
        text = report.model_dump_json(indent=2)
    else:
        text = json.dumps([item.model_dump(mode="json") for item in report], indent=2)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")


def _schedule(config: RunConfig) -> DiffusionSchedule:
    return make_schedule(config.schedule.timesteps, config.schedule.beta_start, config.schedule.beta_end)


def _held_out(config: RunConfig, streams: SeedStreams, normalization: Normalization | None = None) -> ToyDataset:
    return make_dataset(
        config.data.kind,
        config.data.n_eval,
        streams.generator("held-out"),
        normalization=normalization,
        seed=config.seed,
    )


def _paired(a: Array, b: Array) -> tuple[Array, Array]:
    n = min(a.shape[0], b.shape[0])
    return a[:n], b[:n]


def train_teacher(config: RunConfig, layout: OutputLayout) -> Path:
    """Train the multi-step teacher and report its quality against held-out data."""
    streams = SeedStreams(config.seed)
    schedule = _schedule(config)
    data = make_dataset(config.data.kind, config.data.n_train, streams.generator("dataset"), seed=config.seed)
    held_out = _held_out(config, streams, data.normalization)

    model = Denoiser.initialize(config.model, data.n_classes, streams.generator("init"))
    trace = train_denoiser(
        model,
        data,
        schedule,
        streams.child("teacher"),
        steps=config.teacher.steps,
        lr=config.teacher.lr,
        batch_size=config.teacher.batch_size,
        cond_drop_prob=config.teacher.cond_drop_prob,
        weight_decay=config.teacher.weight_decay,
        log_every=config.teacher.log_every,
    )
    path = layout.checkpoints / "teacher.wadi"
    checkpoint.save_model(path, model, data.normalization)
    write_records(
        layout.metrics / "teacher_loss.csv",
        [LossRecord(step=step, loss=loss) for step, loss in enumerate(trace, start=1)],
        list(LossRecord.model_fields),
    )

    samples = ddim_sample(
        model,
        schedule,
        config.distill.teacher_sample_steps,
        config.distill.cfg_scale,
        held_out.labels,
        streams.generator("teacher-eval"),
    )
    summary = TeacherSummary(
        steps=len(trace),
        final_loss=float(np.mean(trace[-config.teacher.log_every :])) if trace else None,
        sample_steps=config.distill.teacher_sample_steps,
        metrics=eval_distribution(samples, held_out.points, held_out.modes, threshold=TEACHER_COVERAGE_THRESHOLD),
    )
    _write_json(layout.reports / "teacher.json", summary)
    write_csv(layout.reports / "held_out.csv", held_out.csv_rows(), SAMPLE_COLUMNS)
    logger.info("Teacher W2 to held-out data: %.4f", summary.metrics.w2, extra=summary.metrics.model_dump())
    return path


def run_distill(config: RunConfig, layout: OutputLayout, teacher_path: Path) -> Path:
    """Distill a one-step student from the teacher checkpoint."""
    streams = SeedStreams(config.seed)
    schedule = _schedule(config)
    teacher, normalization = checkpoint.load_model(teacher_path, config.model)
    teacher.freeze()
    held_out = _held_out(config, streams, normalization)

    result = distill(
        teacher,
        schedule,
        config.distill,
        streams.child("distill"),
        modes=held_out.modes,
        adapt_layers=config.model.adapt_layers,
    )
    student = result.student.denoiser
    path = layout.checkpoints / "student.wadi"
    checkpoint.save_model(path, student, normalization)
    checkpoint.save(layout.checkpoints / "student-adapters.wadi", student.adapter_state())
    checkpoint.save(layout.checkpoints / "fake-adapters.wadi", result.fake.denoiser.adapter_state())
    write_records(layout.metrics / "distill.csv", result.trace, list(MetricsRecord.model_fields))

    summary = DistillSummary(
        initial=result.trace[0],
        final=result.final,
        teacher_vs_data=eval_distribution(*_paired(result.reference, held_out.points), held_out.modes),
        params_student=student.param_count(),
        params_fake=result.fake.denoiser.param_count(),
    )
    _write_json(layout.reports / "distill.json", summary)
    return path


def analyze(student_path: Path, teacher_path: Path, layout: OutputLayout) -> None:
    """Norm and direction drift of one checkpoint against another, with residual energy curves."""
    student = checkpoint.load_snapshot(student_path)
    teacher = checkpoint.load_snapshot(teacher_path)
    report = drift_stats(student, teacher)
    curves = direction_energy(student, teacher)

    _write_json(layout.reports / "drift.json", report)
    write_records(layout.reports / "drift.csv", report.layers, list(DriftRecord.model_fields))
    for curve in curves:
        write_csv(layout.reports / f"energy_{curve.layer}.csv", curve.csv_rows(), ENERGY_COLUMNS)
    _write_json(layout.reports / "energy.json", curves)
    logger.info(
        "Norm change %.4f%%, direction change %.4f%%",
        report.norm_mean,
        report.direction_mean,
        extra={"norm_mean": report.norm_mean, "direction_mean": report.direction_mean},
    )


def swap(direction_path: Path, norm_path: Path, layout: OutputLayout) -> Path:
    """Checkpoint with the weight directions of one model and the column norms of another.

    Every other tensor comes from the direction source.
    """
    direction_tensors = checkpoint.load(direction_path)
    hybrid = swap_components(
        WeightSnapshot.from_named_tensors(direction_tensors),
        checkpoint.load_snapshot(norm_path),
    )
    path = layout.checkpoints / "hybrid.wadi"
    checkpoint.save(path, direction_tensors | hybrid.to_named_tensors())
    return path


def run_ablation(config: RunConfig, layout: OutputLayout, teacher_path: Path) -> list[AblationRow]:
    streams = SeedStreams(config.seed)
    schedule = _schedule(config)
    teacher, normalization = checkpoint.load_model(teacher_path, config.model)
    teacher.freeze()
    held_out = _held_out(config, streams, normalization)

    rows = ablate(
        teacher,
        schedule,
        config.distill,
        config.ablation,
        streams.child("distill"),
        modes=held_out.modes,
        adapt_layers=config.model.adapt_layers,
    )
    write_records(layout.reports / "ablation.csv", rows, list(AblationRow.model_fields))
    _write_json(layout.reports / "ablation.json", rows)
    return rows


def sample(config: RunConfig, layout: OutputLayout, model_path: Path) -> Path:
    """Draw samples in normalized coordinates, one-step for ``steps == 1`` and DDIM otherwise.

    Raises:
        InvalidLabelError: If the requested label is out of range.
    """
    streams = SeedStreams(config.seed)
    schedule = _schedule(config)
    model, _ = checkpoint.load_model(model_path, config.model)
    settings = config.sample

    if settings.label is None:
        labels = cycle_labels(settings.n, model.n_classes)
    elif settings.label > model.null_label:
        raise InvalidLabelError(label=settings.label, n_classes=model.n_classes)
    else:
        labels = np.full(settings.n, settings.label, dtype=np.int64)

    rng = streams.generator("sample")
    if settings.n == 0:
        points = np.zeros((0, 2))
    elif settings.steps == 1:
        generator = StudentGenerator(denoiser=model, schedule=schedule, t_star=schedule.timesteps)
        points = generator.sample(rng.standard_normal((settings.n, 2)), labels)
    else:
        points = ddim_sample(model, schedule, settings.steps, settings.cfg_scale, labels, rng)

    path = layout.reports / "samples.csv"
    rows = ({"x": x, "y": y, "label": label} for (x, y), label in zip(points.tolist(), labels.tolist(), strict=True))
    write_csv(path, rows, SAMPLE_COLUMNS)
    return path


class CLINamespace(argparse.Namespace):
    command: enums.CommandEnum
    config: Path | None
    seed: int | None
    out: Path | None
    log_level: str
    dataset: str | None
    steps: int | None
    teacher: Path
    rank_student: int | None = None
    rank_fake: int | None = None
    cfg_scale: float | None = None
    ratio: int | None = None
    workers: int | None = None
    n: int | None = None
    label: int | None = None
    snapshot_a: Path
    snapshot_b: Path
    direction: Path
    norm: Path
    model: Path


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--dataset", help="Dataset kind")

    def ranks(subparser: argparse.ArgumentParser) -> None:
        subparser.add_argument("--teacher", type=Path, required=True, help="Teacher checkpoint")
        subparser.add_argument("--rank-student", type=int)
        subparser.add_argument("--rank-fake", type=int)
        subparser.add_argument("--cfg-scale", type=float)
        subparser.add_argument("--ratio", type=int, help="Fake-model updates per generator update")
        subparser.add_argument("--steps", type=int, help="Generator updates")

    parser = argparse.ArgumentParser(prog="wadi", allow_abbrev=False)
    commands = parser.add_subparsers(dest="command", required=True)

    subparser = commands.add_parser(enums.CommandEnum.train_teacher, parents=[common], help="Train the teacher")
    subparser.add_argument("--steps", type=int, help="Training steps")

    subparser = commands.add_parser(enums.CommandEnum.distill, parents=[common], help="Distill a one-step student")
    ranks(subparser)

    subparser = commands.add_parser(enums.CommandEnum.analyze, parents=[common], help="Compare two checkpoints")
    subparser.add_argument("snapshot_a", type=Path, help="Checkpoint under study, typically the student")
    subparser.add_argument("snapshot_b", type=Path, help="Reference checkpoint, typically the teacher")

    subparser = commands.add_parser(enums.CommandEnum.swap, parents=[common], help="Combine directions and norms")
    subparser.add_argument("direction", type=Path, help="Checkpoint providing weight directions")
    subparser.add_argument("norm", type=Path, help="Checkpoint providing column norms")

    subparser = commands.add_parser(enums.CommandEnum.ablate, parents=[common], help="Adapter and rank ablations")
    ranks(subparser)
    subparser.add_argument("--workers", type=int)

    subparser = commands.add_parser(enums.CommandEnum.sample, parents=[common], help="Sample from a checkpoint")
    subparser.add_argument("model", type=Path, help="Model checkpoint")
    subparser.add_argument("--n", type=int, help="Number of samples")
    subparser.add_argument("--steps", type=int, help="1 for one-step sampling, more for DDIM")
    subparser.add_argument("--cfg-scale", type=float)
    subparser.add_argument("--label", type=int)

    return parser


def overrides(args: CLINamespace) -> dict[str, Any]:
    """Dotted configuration keys set by the command-line flags."""
    values: dict[str, Any] = {
        "seed": args.seed,
        "out": None if args.out is None else str(args.out),
        "data.kind": args.dataset,
        "distill.r_student": args.rank_student,
        "distill.r_fake": args.rank_fake,
        "distill.ratio": args.ratio,
    }
    match args.command:
        case enums.CommandEnum.train_teacher:
            values["teacher.steps"] = args.steps
        case enums.CommandEnum.distill:
            values["distill.cfg_scale"] = args.cfg_scale
            if args.steps is not None:
                values["distill.epochs"] = 1
                values["distill.steps_per_epoch"] = args.steps
        case enums.CommandEnum.ablate:
            values["distill.cfg_scale"] = args.cfg_scale
            values["ablation.steps"] = args.steps
            values["ablation.workers"] = args.workers
        case enums.CommandEnum.sample:
            values["sample.n"] = args.n
            values["sample.steps"] = args.steps
            values["sample.cfg_scale"] = args.cfg_scale
            values["sample.label"] = args.label
        case enums.CommandEnum.analyze | enums.CommandEnum.swap:
            pass
        case _:
            assert_never(args.command)
    return values


def run(args: CLINamespace, config: RunConfig) -> None:
    layout = OutputLayout(config.out)
    layout.prepare(config)
    match args.command:
        case enums.CommandEnum.train_teacher:
            train_teacher(config, layout)
        case enums.CommandEnum.distill:
            run_distill(config, layout, args.teacher)
        case enums.CommandEnum.analyze:
            analyze(args.snapshot_a, args.snapshot_b, layout)
        case enums.CommandEnum.swap:
            swap(args.direction, args.norm, layout)
        case enums.CommandEnum.ablate:
            run_ablation(config, layout, args.teacher)
        case enums.CommandEnum.sample:
            sample(config, layout, args.model)
        case _:
            assert_never(args.command)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv, namespace=CLINamespace())
    args.command = enums.CommandEnum(args.command)
    configure_logging(args.log_level)

    try:
        config = load_config(args.config, overrides(args))
        run(args, config)
    except pydantic.ValidationError as e:
        for error in e.errors():
            location = ".".join(str(part) for part in error["loc"]) or "config"
            print(f"invalid configuration: {location}: {error['msg']}", file=sys.stderr)
        return INVALID_CONFIG_EXIT_CODE
    except exceptions.WadiError as e:
        print(f"error: {e}", file=sys.stderr)
        return exit_code(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
