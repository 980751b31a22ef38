"""Conditional MLP noise predictor.

Activations are feature-major (``features x batch``) inside the network so every linear layer
multiplies a ``d x k`` weight from the left. The public helpers take and return ``n x 2`` arrays.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import TYPE_CHECKING

import numpy as np

from wadi import exceptions, ids
from wadi.adapters.layers import Adapter, build_adapter
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.tensor import Array, Tensor, no_grad, numpy_dtype

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator, Mapping

    import numpy.typing as npt

    from wadi import enums
    from wadi.schemas.config import ModelConfig

logger = logging.getLogger(__name__)

DATA_DIM = 2
COND_LAYER = "cond"
COND_PARAM = "embedding"
OUTPUT_LAYER = "out"


class ArchitectureMismatchError(exceptions.MismatchError):
    """Stored tensors do not fit the configured architecture."""

    def __init__(self, *, names: Iterable[str]) -> None:
        self.names = sorted(names)
        super().__init__(f"tensors do not match the configured architecture: {', '.join(self.names)}")


class UnknownLayerError(exceptions.NotFoundError):
    def __init__(self, *, layers: Iterable[str]) -> None:
        super().__init__(f"no linear layer(s) named {', '.join(sorted(layers))}")


def timestep_embedding(t: npt.ArrayLike, dim: int) -> Array:
    """Sinusoidal embedding of integer timesteps, ``dim x n``."""
    half = dim // 2
    freqs = np.exp(-math.log(10_000.0) * np.arange(half) / half)
    args = np.outer(freqs, np.asarray(t, dtype=np.float64).reshape(-1))
    return np.concatenate([np.sin(args), np.cos(args)], axis=0)


@dataclasses.dataclass(slots=True)
class LinearSlot:
    """A linear layer holding plain weights or an adapter over them."""

    name: str
    weight: Tensor
    bias: Tensor
    adapter: Adapter | None = None

    @property
    def shape(self) -> tuple[int, int]:
        d, k = self.weight.shape
        return d, k

    def effective_weight(self) -> Tensor:
        return self.weight if self.adapter is None else self.adapter.effective_weight()

    def merged_weight(self) -> Array:
        return self.weight.data.copy() if self.adapter is None else self.adapter.merge()

    def __call__(self, x: Tensor) -> Tensor:
        out = F.matmul(self.effective_weight(), x)
        return F.add(out, F.broadcast_to(self.bias, out.shape))


class Denoiser:
    """Noise prediction ``eps(z_t, t, c)`` with a learned condition table and a null token."""

    def __init__(self, slots: list[LinearSlot], cond_table: Tensor, *, time_embed_dim: int) -> None:
        self.slots = slots
        self.cond_table = cond_table
        self.time_embed_dim = time_embed_dim

    @classmethod
    def initialize(cls, config: ModelConfig, n_classes: int, rng: np.random.Generator) -> Denoiser:
        """Fresh weights drawn from ``N(0, 1/fan_in)``, zero biases."""
        dtype = config.dtype
        slots = []
        for name, (d, k) in _layer_shapes(config):
            weight = rng.normal(0.0, 1.0 / math.sqrt(k), size=(d, k))
            slots.append(
                LinearSlot(
                    name=name,
                    weight=Tensor(weight, dtype=dtype, requires_grad=True),
                    bias=Tensor(np.zeros((d, 1)), dtype=dtype, requires_grad=True),
                ),
            )
        table = rng.normal(0.0, 1.0, size=(n_classes + 1, config.cond_embed_dim))
        return cls(slots, Tensor(table, dtype=dtype, requires_grad=True), time_embed_dim=config.time_embed_dim)

    @classmethod
    def from_state(cls, tensors: Mapping[str, Array], config: ModelConfig) -> Denoiser:
        """Rebuild a denoiser from named tensors, checking them against ``config``.

        Raises:
            ArchitectureMismatchError: If a tensor is missing or has the wrong shape.
        """
        cond_name = ids.TensorName(COND_LAYER, COND_PARAM).as_checkpoint_name()
        if cond_name not in tensors:
            raise ArchitectureMismatchError(names=[cond_name])
        table = tensors[cond_name]
        n_classes = table.shape[0] - 1

        expected = {cond_name: (n_classes + 1, config.cond_embed_dim)}
        for name, (d, k) in _layer_shapes(config):
            expected[ids.TensorName(name, "weight").as_checkpoint_name()] = (d, k)
            expected[ids.TensorName(name, "bias").as_checkpoint_name()] = (d, 1)
        wrong = {name for name, shape in expected.items() if name not in tensors or tensors[name].shape != shape}
        if wrong:
            raise ArchitectureMismatchError(names=wrong)

        dtype = config.dtype
        slots = [
            LinearSlot(
                name=name,
                weight=Tensor(tensors[f"{name}.weight"], dtype=dtype, requires_grad=True),
                bias=Tensor(tensors[f"{name}.bias"], dtype=dtype, requires_grad=True),
            )
            for name, _ in _layer_shapes(config)
        ]
        return cls(slots, Tensor(table, dtype=dtype, requires_grad=True), time_embed_dim=config.time_embed_dim)

    def copy(self) -> Denoiser:
        """Independent plain network with the merged weights of this one."""
        slots = [
            LinearSlot(
                name=slot.name,
                weight=Tensor(slot.merged_weight(), requires_grad=True),
                bias=Tensor(slot.bias.data, requires_grad=True),
            )
            for slot in self.slots
        ]
        return Denoiser(slots, Tensor(self.cond_table.data, requires_grad=True), time_embed_dim=self.time_embed_dim)

    @property
    def n_classes(self) -> int:
        return self.cond_table.shape[0] - 1

    @property
    def null_label(self) -> int:
        return self.n_classes

    @property
    def dtype(self) -> enums.DType:
        return self.cond_table.dtype

    def slot(self, name: str) -> LinearSlot:
        for slot in self.slots:
            if slot.name == name:
                return slot
        raise UnknownLayerError(layers=[name])

    def freeze(self) -> None:
        """Stop gradients into base weights, biases and the condition table."""
        for slot in self.slots:
            slot.weight.requires_grad = False
            slot.bias.requires_grad = False
        self.cond_table.requires_grad = False

    def adapt(
        self,
        kind: enums.AdapterKindEnum,
        rank: int,
        rng: np.random.Generator,
        *,
        layers: Iterable[str] | None = None,
    ) -> None:
        """Freeze the network and wrap the selected linear layers in adapters.

        Raises:
            UnknownLayerError: If ``layers`` names a layer the network does not have.
        """
        names = {slot.name for slot in self.slots}
        selected = names if layers is None else set(layers)
        if unknown := selected - names:
            raise UnknownLayerError(layers=unknown)
        self.freeze()
        for slot in self.slots:
            if slot.name in selected:
                slot.adapter = build_adapter(kind, slot.weight.data, rank, rng, name=slot.name)
        logger.debug("Attached %s adapters of rank %d to %s", kind, rank, ", ".join(sorted(selected)))

    def trainable_parameters(self) -> dict[str, Tensor]:
        """Every tensor that receives gradients, keyed by checkpoint name."""
        params: dict[str, Tensor] = {}
        for slot in self.slots:
            if slot.adapter is not None:
                for param, tensor in slot.adapter.parameters().items():
                    params[ids.TensorName(slot.name, param, slot.adapter.kind).as_checkpoint_name()] = tensor
            for param, tensor in (("weight", slot.weight), ("bias", slot.bias)):
                if tensor.requires_grad:
                    params[ids.TensorName(slot.name, param).as_checkpoint_name()] = tensor
        if self.cond_table.requires_grad:
            params[ids.TensorName(COND_LAYER, COND_PARAM).as_checkpoint_name()] = self.cond_table
        return params

    def param_count(self) -> int:
        return sum(t.size for t in self.trainable_parameters().values())

    def state(self) -> dict[str, Array]:
        """Merged weights, biases and the condition table."""
        tensors: dict[str, Array] = {}
        for slot in self.slots:
            tensors[ids.TensorName(slot.name, "weight").as_checkpoint_name()] = slot.merged_weight()
            tensors[ids.TensorName(slot.name, "bias").as_checkpoint_name()] = slot.bias.data.copy()
        tensors[ids.TensorName(COND_LAYER, COND_PARAM).as_checkpoint_name()] = self.cond_table.data.copy()
        return tensors

    def adapter_state(self) -> dict[str, Array]:
        return {
            name: tensor.data.copy()
            for name, tensor in self.trainable_parameters().items()
            if ids.TensorName.from_checkpoint_name(name).kind is not None
        }

    def base_tensors(self) -> Iterator[Tensor]:
        for slot in self.slots:
            yield slot.weight
            yield slot.bias
        yield self.cond_table

    def forward(self, z: Tensor, t: npt.ArrayLike, labels: npt.ArrayLike) -> Tensor:
        """Predicted noise, ``2 x n`` for a ``2 x n`` input."""
        n = z.shape[1]
        t_arr = np.broadcast_to(np.asarray(t), (n,))
        temb = Tensor(timestep_embedding(t_arr, self.time_embed_dim), dtype=self.dtype)
        cemb = F.transpose(F.take(self.cond_table, np.broadcast_to(np.asarray(labels), (n,))))
        h = F.concat([z, temb, cemb], axis=0)
        *hidden, last = self.slots
        for slot in hidden:
            h = F.silu(slot(h))
        return last(h)

    def predict(self, z: Array, t: npt.ArrayLike, labels: npt.ArrayLike) -> Array:
        """Predicted noise for ``n x 2`` points, without recording history."""
        with no_grad():
            z_t = Tensor(np.asarray(z, dtype=numpy_dtype(self.dtype)).T, dtype=self.dtype)
            return self.forward(z_t, t, labels).data.T.copy()


def _layer_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    width = config.hidden_width
    shapes = [("fc0", (width, DATA_DIM + config.time_embed_dim + config.cond_embed_dim))]
    shapes.extend((f"fc{i}", (width, width)) for i in range(1, config.hidden_layers))
    shapes.append((OUTPUT_LAYER, (DATA_DIM, width)))
    return shapes
