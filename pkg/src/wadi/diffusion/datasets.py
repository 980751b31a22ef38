"""Labelled 2D toy datasets.

Points are normalized to zero mean and unit RMS per coordinate. The normalization constants are
kept with the dataset so held-out draws and generated samples share the same frame.
"""

from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING, assert_never

import numpy as np
from scipy.spatial.distance import cdist

from wadi import enums, exceptions

if TYPE_CHECKING:
    from collections.abc import Iterable

    from wadi.autodiff.tensor import Array

MIXTURE_COMPONENTS = 8
MIXTURE_RADIUS = 2.0
MIXTURE_STD = 0.15
MOONS_NOISE = 0.08
ROLL_NOISE = 0.3
ROLL_SEGMENTS = 3


class DatasetSizeError(exceptions.BadParameterError):
    def __init__(self, *, n: int) -> None:
        super().__init__(f"dataset size must be positive, got {n}")


@dataclasses.dataclass(frozen=True, slots=True)
class Normalization:
    mean: Array
    scale: Array

    def apply(self, points: Array) -> Array:
        return (points - self.mean) / self.scale

    def invert(self, points: Array) -> Array:
        return points * self.scale + self.mean

    @classmethod
    def fit(cls, points: Array) -> Normalization:
        mean = points.mean(axis=0)
        scale = np.sqrt(np.mean((points - mean) ** 2, axis=0))
        return cls(mean=mean, scale=np.where(scale > 0, scale, 1.0))


@dataclasses.dataclass(frozen=True, slots=True)
class ToyDataset:
    """Normalized points, their labels and the per-label reference modes."""

    kind: enums.DatasetKindEnum
    points: Array
    labels: Array
    n_classes: int
    modes: Array
    normalization: Normalization
    seed: int | None = None

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def null_label(self) -> int:
        return self.n_classes

    def csv_rows(self) -> Iterable[dict[str, object]]:
        for (x, y), label in zip(self.points.tolist(), self.labels.tolist(), strict=True):
            yield {"x": x, "y": y, "label": label}


def _gaussian_mixture(rng: np.random.Generator, n: int) -> tuple[Array, Array, Array]:
    angles = 2 * np.pi * np.arange(MIXTURE_COMPONENTS) / MIXTURE_COMPONENTS
    centers = MIXTURE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = rng.integers(0, MIXTURE_COMPONENTS, size=n)
    points = centers[labels] + MIXTURE_STD * rng.standard_normal((n, 2))
    return points, labels, centers


def _two_moons(rng: np.random.Generator, n: int) -> tuple[Array, Array, Array]:
    labels = rng.integers(0, 2, size=n)
    angle = np.pi * rng.random(n)
    outer = np.stack([np.cos(angle), np.sin(angle)], axis=1)
    inner = np.stack([1.0 - np.cos(angle), 0.5 - np.sin(angle)], axis=1)
    points = np.where(labels[:, None] == 0, outer, inner) + MOONS_NOISE * rng.standard_normal((n, 2))
    # analytic centroids of the two half circles
    arc = 2 / np.pi
    modes = np.array([[0.0, arc], [1.0, 0.5 - arc]])
    return points, labels, modes


def _swiss_roll(rng: np.random.Generator, n: int) -> tuple[Array, Array, Array]:
    u = rng.random(n)
    t = 1.5 * np.pi * (1 + 2 * u)
    points = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) + ROLL_NOISE * rng.standard_normal((n, 2))
    labels = np.minimum((ROLL_SEGMENTS * u).astype(np.int64), ROLL_SEGMENTS - 1)
    # centroids of the noiseless arc segments
    grid = (np.arange(ROLL_SEGMENTS * 256) + 0.5) / (ROLL_SEGMENTS * 256)
    t_grid = 1.5 * np.pi * (1 + 2 * grid)
    curve = np.stack([t_grid * np.cos(t_grid), t_grid * np.sin(t_grid)], axis=1)
    modes = curve.reshape(ROLL_SEGMENTS, 256, 2).mean(axis=1)
    return points, labels, modes


def make_dataset(
    kind: enums.DatasetKindEnum,
    n: int,
    rng: np.random.Generator,
    *,
    normalization: Normalization | None = None,
    seed: int | None = None,
) -> ToyDataset:
    """Draw ``n`` labelled points.

    Args:
        kind: Dataset kind.
        n: Number of points.
        rng: Source of randomness.
        normalization: Constants to reuse; fitted on the draw when unset.
        seed: Recorded on the dataset for provenance.

    Raises:
        DatasetSizeError: If ``n`` is not positive.
    """
    if n < 1:
        raise DatasetSizeError(n=n)

    match kind:
        case enums.DatasetKindEnum.gaussian_mixture_8:
            points, labels, modes = _gaussian_mixture(rng, n)
        case enums.DatasetKindEnum.two_moons:
            points, labels, modes = _two_moons(rng, n)
        case enums.DatasetKindEnum.swiss_roll:
            points, labels, modes = _swiss_roll(rng, n)
        case _:
            assert_never(kind)

    normalization = normalization or Normalization.fit(points)
    return ToyDataset(
        kind=kind,
        points=normalization.apply(points),
        labels=labels.astype(np.int64),
        n_classes=int(modes.shape[0]),
        modes=normalization.apply(modes),
        normalization=normalization,
        seed=seed,
    )


def assign_modes(points: Array, modes: Array) -> Array:
    """Index of the nearest mode of every point."""
    return np.argmin(cdist(points, modes, metric="sqeuclidean"), axis=1)


def cycle_labels(n: int, n_classes: int) -> Array:
    return np.arange(n, dtype=np.int64) % n_classes
