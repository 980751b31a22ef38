"""Validated run configuration.

Every command reads one :class:`RunConfig`. Files are JSON; command-line flags are applied as
dotted overrides on the raw mapping, so the same validation covers both.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING, Any, Self

from pydantic import BaseModel as PydanticBaseModel
from pydantic import ConfigDict, Field, field_validator, model_validator

from wadi import enums, exceptions

if TYPE_CHECKING:
    from collections.abc import Mapping

DEFAULT_RANK_GRID: list[tuple[int, int]] = [(8, 2), (16, 2), (32, 2), (64, 2), (16, 1), (16, 4)]


class ConfigNotFoundError(exceptions.NotFoundError):
    """Configuration file not found."""

    def __init__(self, *, path: Path) -> None:
        super().__init__(f"configuration file '{path}' does not exist")


class InvalidConfigFileError(exceptions.BadParameterError):
    """Configuration file that is not a JSON object."""

    def __init__(self, *, path: Path, reason: str) -> None:
        super().__init__(f"configuration file '{path}' is not a JSON object: {reason}")


class BaseModel(PydanticBaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataConfig(BaseModel):
    """Synthetic dataset."""

    kind: enums.DatasetKindEnum = Field(
        default=enums.DatasetKindEnum.gaussian_mixture_8,
        description="Dataset kind",
        examples=["gaussian-mixture-8"],
    )
    n_train: int = Field(default=8192, ge=16, description="Training points")
    n_eval: int = Field(default=2048, ge=1, description="Held-out points used as the data reference")


class ScheduleConfig(BaseModel):
    """Linear variance schedule."""

    timesteps: int = Field(default=100, ge=2, description="Number of diffusion steps T")
    beta_start: float = Field(default=1e-4, gt=0, lt=1)
    beta_end: float = Field(default=0.15, gt=0, lt=1, description="Final beta, large enough that alpha_bar_T < 1e-3")

    @model_validator(mode="after")
    def _ordered(self) -> Self:
        if self.beta_start > self.beta_end:
            msg = f"beta_start ({self.beta_start}) must not exceed beta_end ({self.beta_end})"
            raise ValueError(msg)
        return self


class ModelConfig(BaseModel):
    """Denoiser architecture."""

    hidden_width: int = Field(default=128, ge=2, description="Width of every hidden layer, even")
    hidden_layers: int = Field(default=4, ge=1, description="Number of hidden layers")
    time_embed_dim: int = Field(default=32, ge=2, description="Width of the sinusoidal timestep embedding, even")
    cond_embed_dim: int = Field(default=16, ge=1, description="Width of the learned condition embedding")
    adapt_layers: list[str] | None = Field(
        default=None,
        description="Layers receiving adapters, every linear layer when unset",
        examples=[["fc1", "fc2"]],
    )
    dtype: enums.DType = Field(default=enums.DType.float64, description="Element width of all parameters")

    @field_validator("hidden_width", "time_embed_dim")
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            msg = f"must be even, got {value}"
            raise ValueError(msg)
        return value


class TeacherConfig(BaseModel):
    """Teacher training."""

    steps: int = Field(default=5000, ge=0)
    lr: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=0.0, ge=0)
    batch_size: int = Field(default=256, ge=1)
    cond_drop_prob: float = Field(default=0.1, ge=0, le=1, description="Probability of replacing a label by the null token")
    log_every: int = Field(default=500, ge=1)


class DistillConfig(BaseModel):
    """Alternating score distillation."""

    r_student: int = Field(default=16, ge=1, description="Adapter rank of the one-step student")
    r_fake: int = Field(default=2, ge=1, description="Adapter rank of the fake model")
    adapter_kind: enums.AdapterKindEnum = Field(default=enums.AdapterKindEnum.lorad)
    lr_student: float = Field(default=1e-4, ge=0)
    lr_fake: float = Field(default=1e-2, ge=0)
    weight_decay: float = Field(default=0.01, ge=0)
    cfg_scale: float = Field(default=1.5, ge=0, description="Guidance scale applied to the teacher")
    ratio: int = Field(default=1, ge=1, description="Fake-model updates per generator update")
    weighting: enums.WeightingModeEnum = Field(default=enums.WeightingModeEnum.normalized)
    batch_size: int = Field(default=128, ge=1)
    epochs: int = Field(default=2, ge=0)
    steps_per_epoch: int = Field(default=1000, ge=0, description="Generator updates per epoch")
    t_min_frac: float = Field(default=0.02, gt=0, le=1, description="Lower end of the sampled timesteps, as a fraction of T")
    t_max_frac: float = Field(default=0.98, gt=0, le=1, description="Upper end of the sampled timesteps, as a fraction of T")
    eval_interval: int = Field(default=200, ge=1)
    eval_samples: int = Field(default=2048, ge=1)
    teacher_sample_steps: int = Field(default=50, ge=1, description="DDIM steps of the teacher reference samples")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @model_validator(mode="after")
    def _ordered(self) -> Self:
        if self.t_min_frac > self.t_max_frac:
            msg = f"t_min_frac ({self.t_min_frac}) must not exceed t_max_frac ({self.t_max_frac})"
            raise ValueError(msg)
        return self

    def t_range(self, timesteps: int) -> tuple[int, int]:
        """Inclusive integer timestep range within ``[1, timesteps]``."""
        low = min(timesteps, max(1, round(self.t_min_frac * timesteps)))
        high = min(timesteps, max(low, round(self.t_max_frac * timesteps)))
        return low, high


class AblationConfig(BaseModel):
    """Adapter-type and rank sweeps."""

    kinds: list[enums.AdapterKindEnum] = Field(default_factory=lambda: list(enums.AdapterKindEnum))
    rank_grid: list[tuple[int, int]] = Field(
        default_factory=lambda: list(DEFAULT_RANK_GRID),
        description="(student rank, fake rank) settings of the rank sweep",
    )
    workers: int = Field(default=1, ge=1, description="Cells run concurrently")
    steps: int | None = Field(default=None, ge=0, description="Generator updates per cell, the distill setting when unset")

    @field_validator("rank_grid")
    @classmethod
    def _positive(cls, value: list[tuple[int, int]]) -> list[tuple[int, int]]:
        if any(r < 1 or f < 1 for r, f in value):
            msg = "ranks must be at least 1"
            raise ValueError(msg)
        return value


class SampleConfig(BaseModel):
    n: int = Field(default=2048, ge=0, description="Number of samples")
    steps: int = Field(default=50, ge=1, description="1 runs the one-step generator, more runs DDIM")
    cfg_scale: float = Field(default=1.5, ge=0)
    label: int | None = Field(default=None, ge=0, description="Condition of every sample, labels cycle when unset")


class RunConfig(BaseModel):
    """Everything a command needs."""

    seed: int = Field(default=0, ge=0)
    out: Path = Field(default=Path("out"), description="Output directory")
    data: DataConfig = Field(default_factory=DataConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    teacher: TeacherConfig = Field(default_factory=TeacherConfig)
    distill: DistillConfig = Field(default_factory=DistillConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    sample: SampleConfig = Field(default_factory=SampleConfig)


def apply_overrides(raw: dict[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Set dotted keys (``distill.r_student``) on a nested mapping, skipping ``None`` values."""
    for dotted, value in overrides.items():
        if value is None:
            continue
        *parents, key = dotted.split(".")
        node = raw
        for parent in parents:
            node = node.setdefault(parent, {})
        node[key] = value
    return raw


def load_config(path: Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read a JSON configuration, apply overrides and validate.

    Raises:
        ConfigNotFoundError: If ``path`` does not exist.
        InvalidConfigFileError: If the file is not a JSON object.
        pydantic.ValidationError: If a value is invalid or a key unknown.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        if not path.is_file():
            raise ConfigNotFoundError(path=path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidConfigFileError(path=path, reason=str(e)) from e
        if not isinstance(raw, dict):
            raise InvalidConfigFileError(path=path, reason=type(raw).__name__)
    return RunConfig.model_validate(apply_overrides(raw, overrides or {}))
