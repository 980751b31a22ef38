"""Pydantic models for every report the experiments emit."""

from __future__ import annotations

import csv
from typing import TYPE_CHECKING, Self

import numpy as np
from pydantic import BaseModel as PydanticBaseModel
from pydantic import ConfigDict, Field

from wadi import enums

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from pathlib import Path


class BaseModel(PydanticBaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class DriftRecord(BaseModel):
    """Norm and direction change of one layer."""

    layer: str = Field(description="Layer name", examples=["fc1"])
    norm_change_pct: float = Field(ge=0, description="Mean relative column-norm change, in percent")
    direction_change_pct: float = Field(ge=0, description="Mean column (1 - cosine similarity), in percent")


class DriftReport(BaseModel):
    """Per-layer drift records and their aggregates."""

    layers: list[DriftRecord]
    norm_mean: float = Field(ge=0, description="Mean of the per-layer norm changes")
    norm_std: float = Field(ge=0, description="Standard deviation of the per-layer norm changes")
    direction_mean: float = Field(ge=0, description="Mean of the per-layer direction changes")
    direction_std: float = Field(ge=0, description="Standard deviation of the per-layer direction changes")

    @classmethod
    def from_records(cls, records: Sequence[DriftRecord]) -> Self:
        norms = np.array([r.norm_change_pct for r in records], dtype=np.float64)
        directions = np.array([r.direction_change_pct for r in records], dtype=np.float64)
        return cls(
            layers=list(records),
            norm_mean=float(norms.mean()) if records else 0.0,
            norm_std=float(norms.std()) if records else 0.0,
            direction_mean=float(directions.mean()) if records else 0.0,
            direction_std=float(directions.std()) if records else 0.0,
        )


class EnergyCurve(BaseModel):
    """Cumulative energy of the singular values of a residual matrix."""

    layer: str = Field(description="Layer name, or 'pooled' for the union of all layers", examples=["fc1"])
    sigma: list[float] = Field(description="Singular values, descending")
    cumulative_energy: list[float] = Field(description="Energy fraction captured by the leading singular values")
    rank_fraction: float = Field(
        ge=0,
        le=1,
        description="Smallest fraction of min(d, k) whose leading singular values reach the energy target",
    )
    energy_target: float = Field(default=0.93, gt=0, le=1, description="Energy target of rank_fraction")

    def csv_rows(self) -> Iterable[dict[str, object]]:
        for rank, (sigma, energy) in enumerate(zip(self.sigma, self.cumulative_energy, strict=True), start=1):
            yield {"rank": rank, "sigma": sigma, "cumulative_energy": energy}


class DistributionMetrics(BaseModel):
    """Sample-based distances between two point sets."""

    w2: float = Field(ge=0, description="Exact 2-Wasserstein distance")
    mmd: float = Field(ge=0, description="Maximum mean discrepancy with a median-bandwidth Gaussian kernel")
    coverage: float | None = Field(
        default=None,
        ge=0,
        le=1,
        description="Fraction of reference modes receiving enough samples, when modes are known",
    )


class MetricsRecord(BaseModel):
    """One evaluation of a distillation run."""

    step: int = Field(ge=0, description="Generator steps taken")
    gen_loss: float = Field(description="Generator surrogate loss")
    fake_loss: float = Field(ge=0, description="Fake-model denoising loss")
    w2: float = Field(ge=0)
    mmd: float = Field(ge=0)
    coverage: float | None = Field(default=None, ge=0, le=1)


class LossRecord(BaseModel):
    step: int = Field(ge=0)
    loss: float = Field(ge=0)


class TeacherSummary(BaseModel):
    """Quality of a trained teacher against held-out data."""

    steps: int = Field(ge=0)
    final_loss: float | None = Field(default=None, ge=0, description="Mean loss of the last logging window")
    sample_steps: int = Field(ge=1, description="DDIM steps of the evaluated samples")
    metrics: DistributionMetrics


class DistillSummary(BaseModel):
    """Start and end of a distillation run."""

    initial: MetricsRecord
    final: MetricsRecord
    teacher_vs_data: DistributionMetrics = Field(description="Teacher reference samples against held-out data")
    params_student: int = Field(ge=0)
    params_fake: int = Field(ge=0)


class AblationRow(BaseModel):
    """One cell of an adapter or rank ablation."""

    setting: str = Field(description="Row label", examples=["lorad", "r16-f2"])
    kind: enums.AdapterKindEnum
    r_student: int = Field(ge=1)
    r_fake: int = Field(ge=1)
    params_student: int = Field(ge=0, description="Trainable student parameters")
    params_fake: int = Field(ge=0, description="Trainable fake-model parameters")
    w2: float | None = None
    mmd: float | None = None
    coverage: float | None = None
    nm: float | None = Field(default=None, description="Mean norm change of the merged student vs the teacher, percent")
    dm: float | None = Field(default=None, description="Mean direction change of the merged student vs the teacher, percent")
    error: str | None = Field(default=None, description="Failure message when the cell did not complete")


def write_csv(path: Path, rows: Iterable[dict[str, object]], columns: Sequence[str]) -> None:
    """Write rows with a header line, empty cells for missing values."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: "" if row.get(key) is None else row[key] for key in columns})


def write_records(path: Path, records: Sequence[PydanticBaseModel], columns: Sequence[str]) -> None:
    write_csv(path, (record.model_dump(mode="json") for record in records), columns)
