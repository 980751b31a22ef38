"""Norm/direction analysis of weight snapshots.

Columns of every ``d x k`` matrix are split into a Euclidean norm and a unit direction. Two
snapshots of the same architecture can then be compared layer by layer, their residual direction
matrices spectrally analysed, and their norms and directions exchanged.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator, Mapping
from typing import TYPE_CHECKING

import numpy as np

from wadi import exceptions, ids
from wadi.autodiff import functional as F  # noqa: N812
from wadi.helpers.linalg import jacobi_singular_values
from wadi.schemas.reports import DriftRecord, DriftReport, EnergyCurve

if TYPE_CHECKING:
    import numpy.typing as npt

    from wadi.autodiff.tensor import Array

logger = logging.getLogger(__name__)

ENERGY_TARGET = 0.93
POOLED = "pooled"


class EmptyMatrixError(exceptions.BadParameterError):
    """Snapshot layer that is not a non-empty matrix."""

    def __init__(self, *, layer: str, shape: tuple[int, ...]) -> None:
        super().__init__(f"layer '{layer}' must be a non-empty matrix, got shape {shape}")


class DuplicateLayerError(exceptions.BadParameterError):
    """Snapshot with a repeated layer name."""

    def __init__(self, *, layer: str) -> None:
        super().__init__(f"layer '{layer}' appears more than once")


class ZeroColumnError(exceptions.BadParameterError):
    """Matrix column with zero norm."""

    def __init__(self, *, column: int, layer: str | None = None) -> None:
        self.column = column
        where = f" of layer '{layer}'" if layer else ""
        super().__init__(f"column {column}{where} has zero norm")


class SnapshotMismatchError(exceptions.MismatchError):
    """Snapshots disagree on layer names or shapes."""

    def __init__(self, *, layers: Iterable[str]) -> None:
        self.layers = sorted(layers)
        super().__init__(f"snapshots differ on layer(s): {', '.join(self.layers)}")


class WeightSnapshot(Mapping[str, "Array"]):
    """Read-only ordered map from layer name to weight matrix."""

    def __init__(self, layers: Mapping[str, npt.ArrayLike] | Iterable[tuple[str, npt.ArrayLike]]) -> None:
        items = layers.items() if isinstance(layers, Mapping) else layers
        self._layers: dict[str, Array] = {}
        for name, matrix in items:
            if name in self._layers:
                raise DuplicateLayerError(layer=name)
            array = np.array(matrix, copy=True)
            if not np.issubdtype(array.dtype, np.floating):
                array = array.astype(np.float64)
            if array.ndim != 2 or array.size == 0:  # noqa: PLR2004
                raise EmptyMatrixError(layer=name, shape=tuple(array.shape))
            array.flags.writeable = False
            self._layers[name] = array

    def __getitem__(self, layer: str) -> Array:
        return self._layers[layer]

    def __iter__(self) -> Iterator[str]:
        return iter(self._layers)

    def __len__(self) -> int:
        return len(self._layers)

    def __repr__(self) -> str:
        return f"WeightSnapshot({', '.join(f'{k}={v.shape}' for k, v in self._layers.items())})"

    @classmethod
    def from_named_tensors(cls, tensors: Mapping[str, Array]) -> WeightSnapshot:
        """Collect the ``<layer>.weight`` tensors of a checkpoint."""
        weights = []
        for name, array in tensors.items():
            tensor_name = ids.TensorName.from_checkpoint_name(name)
            if tensor_name.is_weight:
                weights.append((tensor_name.layer, array))
        return cls(weights)

    def to_named_tensors(self) -> dict[str, Array]:
        return {ids.TensorName(layer=layer, param="weight").as_checkpoint_name(): w for layer, w in self.items()}


def decompose(weight: Array, *, layer: str | None = None) -> tuple[Array, Array]:
    """Split ``weight`` into ``(1, k)`` column norms and unit-norm columns.

    Raises:
        ZeroColumnError: If a column has zero norm.
    """
    norms = np.linalg.norm(weight, axis=0, keepdims=True)
    if (zero := np.flatnonzero(norms[0] == 0)).size:
        raise ZeroColumnError(column=int(zero[0]), layer=layer)
    return norms, weight / norms


def recompose(norms: Array, directions: Array) -> Array:
    return norms * directions


def _check_matching(a: Mapping[str, Array], b: Mapping[str, Array]) -> None:
    differing = set(a) ^ set(b)
    differing.update(name for name in set(a) & set(b) if a[name].shape != b[name].shape)
    if differing:
        raise SnapshotMismatchError(layers=differing)


def _layer_drift(layer: str, student: Array, teacher: Array) -> DriftRecord:
    m_s, v_s = decompose(student, layer=layer)
    m_t, v_t = decompose(teacher, layer=layer)
    cosine = np.clip(np.sum(v_s * v_t, axis=0), -1.0, 1.0)
    return DriftRecord(
        layer=layer,
        norm_change_pct=float(100 * np.mean(np.abs(m_s - m_t) / m_t)),
        direction_change_pct=float(100 * np.mean(1.0 - cosine)),
    )


def drift_stats(student: WeightSnapshot, teacher: WeightSnapshot) -> DriftReport:
    """Per-layer norm and direction change of ``student`` relative to ``teacher``.

    Raises:
        SnapshotMismatchError: If the layer sets or shapes differ.
        ZeroColumnError: If any column has zero norm.
    """
    _check_matching(student, teacher)
    return DriftReport.from_records([_layer_drift(layer, student[layer], teacher[layer]) for layer in teacher])


def energy_curve(
    sigma: Array,
    *,
    layer: str,
    full_rank: int,
    energy_target: float = ENERGY_TARGET,
) -> EnergyCurve:
    """Cumulative energy of descending singular values.

    A zero residual has no energy to capture: its curve is all ones and its rank fraction zero.
    """
    sigma = np.sort(np.asarray(sigma, dtype=np.float64))[::-1]
    energy = np.cumsum(sigma * sigma)
    if energy.size == 0 or energy[-1] == 0:
        return EnergyCurve(
            layer=layer,
            sigma=sigma.tolist(),
            cumulative_energy=[1.0] * sigma.size,
            rank_fraction=0.0,
            energy_target=energy_target,
        )

    cumulative = energy / energy[-1]
    needed = int(np.searchsorted(cumulative, energy_target, side="left")) + 1
    return EnergyCurve(
        layer=layer,
        sigma=sigma.tolist(),
        cumulative_energy=cumulative.tolist(),
        rank_fraction=min(1.0, needed / full_rank),
        energy_target=energy_target,
    )


def residual_svd_energy(dir_a: Array, dir_b: Array, *, layer: str = "", energy_target: float = ENERGY_TARGET) -> EnergyCurve:
    """Energy curve of the singular values of ``dir_a - dir_b``.

    Raises:
        ShapeMismatchError: If the matrices differ in shape.
    """
    if dir_a.shape != dir_b.shape:
        raise F.ShapeMismatchError(op="residual_svd_energy", shapes=(dir_a.shape, dir_b.shape))
    sigma = jacobi_singular_values(dir_a - dir_b)
    return energy_curve(sigma, layer=layer, full_rank=min(dir_a.shape), energy_target=energy_target)


def pooled_energy(curves: Iterable[EnergyCurve], full_rank: int, *, energy_target: float = ENERGY_TARGET) -> EnergyCurve:
    """Energy curve over the union of the singular values of several layers."""
    sigma = np.concatenate([np.asarray(curve.sigma, dtype=np.float64) for curve in curves] or [np.zeros(0)])
    return energy_curve(sigma, layer=POOLED, full_rank=full_rank, energy_target=energy_target)


def direction_energy(student: WeightSnapshot, teacher: WeightSnapshot) -> list[EnergyCurve]:
    """Residual direction energy curve of every layer, followed by the pooled curve.

    Raises:
        SnapshotMismatchError: If the layer sets or shapes differ.
    """
    _check_matching(student, teacher)
    curves = []
    for layer in teacher:
        _, v_s = decompose(student[layer], layer=layer)
        _, v_t = decompose(teacher[layer], layer=layer)
        curves.append(residual_svd_energy(v_s, v_t, layer=layer))
        logger.debug("Layer %s needs %.1f%% of its rank", layer, 100 * curves[-1].rank_fraction)
    curves.append(pooled_energy(curves, sum(min(w.shape) for w in teacher.values())))
    return curves


def swap_components(direction_source: WeightSnapshot, norm_source: WeightSnapshot) -> WeightSnapshot:
    """Columns with the directions of ``direction_source`` and the norms of ``norm_source``.

    Raises:
        SnapshotMismatchError: If the layer sets or shapes differ.
        ZeroColumnError: If any column has zero norm.
    """
    _check_matching(direction_source, norm_source)
    layers = []
    for layer, weight in direction_source.items():
        m_norm, _ = decompose(norm_source[layer], layer=layer)
        m_dir, _ = decompose(weight, layer=layer)
        layers.append((layer, weight * (m_norm / m_dir)))
    return WeightSnapshot(layers)


def hybrid_pair(student: WeightSnapshot, teacher: WeightSnapshot) -> tuple[WeightSnapshot, WeightSnapshot]:
    """Student directions with teacher norms, and teacher directions with student norms."""
    return swap_components(student, teacher), swap_components(teacher, student)
