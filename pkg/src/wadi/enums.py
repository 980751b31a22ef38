from __future__ import annotations

import enum
from typing import override


class _HyphenatedEnum(enum.StrEnum):
    """Base class for hyphenated enums."""

    @staticmethod
    @override
    def _generate_next_value_(name: str, start: int, count: int, last_values: list[str]) -> str:
        return name.lower().replace("_", "-")


class DType(enum.StrEnum):
    """Element widths a tensor can carry."""

    float32 = enum.auto()
    float64 = enum.auto()


class EwOp(enum.StrEnum):
    """Element-wise operations."""

    add = enum.auto()
    sub = enum.auto()
    mul = enum.auto()
    scale = enum.auto()
    sin = enum.auto()
    cos = enum.auto()
    square = enum.auto()


class ReduceOp(enum.StrEnum):
    """Reductions."""

    sum = enum.auto()
    mean = enum.auto()
    l2norm = enum.auto()


class AdapterKindEnum(_HyphenatedEnum):
    """Adapter kinds."""

    lora = enum.auto()
    dora = enum.auto()
    dora_frozen_norm = enum.auto()
    ft = enum.auto()
    lorad = enum.auto()


class DatasetKindEnum(_HyphenatedEnum):
    """Synthetic 2D datasets."""

    gaussian_mixture_8 = enum.auto()
    two_moons = enum.auto()
    swiss_roll = enum.auto()


class WeightingModeEnum(_HyphenatedEnum):
    """Time weighting of the score-distillation gradient."""

    sigma_over_alpha = enum.auto()
    normalized = enum.auto()


class CommandEnum(_HyphenatedEnum):
    """Command-line sub-commands."""

    train_teacher = enum.auto()
    distill = enum.auto()
    analyze = enum.auto()
    swap = enum.auto()
    ablate = enum.auto()
    sample = enum.auto()
