"""Adapters wrapping a frozen ``d x k`` weight.

Every adapter exposes the same contract: ``effective_weight`` (differentiable), ``forward``,
``merge`` (a detached copy), ``param_count`` and its learnable ``parameters``.
"""

from __future__ import annotations

import abc
import logging
from typing import TYPE_CHECKING, ClassVar, assert_never, override

import numpy as np

from wadi import enums, exceptions
from wadi.adapters.rotation import OddDimensionError, lorad_angles, rotate_fast
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.tensor import Array, Tensor, is_grad_enabled, no_grad

if TYPE_CHECKING:
    from collections.abc import Mapping

logger = logging.getLogger(__name__)

DORA_NORM_FLOOR = 1e-12


class InvalidRankError(exceptions.BadParameterError):
    """Adapter rank out of range."""

    def __init__(self, *, rank: int, max_rank: int) -> None:
        super().__init__(f"rank must be between 1 and {max_rank}, got {rank}")


class UnknownParameterError(exceptions.NotFoundError):
    """Adapter state with an unexpected parameter name."""

    def __init__(self, *, kind: enums.AdapterKindEnum, names: list[str]) -> None:
        super().__init__(f"{kind} adapter has no parameter(s) {', '.join(names)}")


class Adapter(abc.ABC):
    """Frozen base weight plus learnable parameters producing an effective weight."""

    kind: ClassVar[enums.AdapterKindEnum]

    def __init__(self, weight: Array) -> None:
        if weight.ndim != 2:  # noqa: PLR2004
            raise F.ShapeMismatchError(op=f"{self.kind} adapter", shapes=(weight.shape,))
        self.base = Tensor(weight)

    @property
    def d(self) -> int:
        return self.base.shape[0]

    @property
    def k(self) -> int:
        return self.base.shape[1]

    @abc.abstractmethod
    def parameters(self) -> dict[str, Tensor]:
        """Learnable tensors by parameter name."""

    @abc.abstractmethod
    def effective_weight(self) -> Tensor:
        """Weight the adapted layer multiplies its input with."""

    def forward(self, x: Tensor) -> Tensor:
        """Multiply a ``k`` vector or a ``k x batch`` matrix by the effective weight."""
        if x.ndim not in {1, 2} or x.shape[0] != self.k:
            raise F.ShapeMismatchError(op="adapter_forward", shapes=((self.d, self.k), x.shape))
        if x.ndim == 1:
            return F.reshape(F.matmul(self.effective_weight(), F.reshape(x, (self.k, 1))), (self.d,))
        return F.matmul(self.effective_weight(), x)

    def merge(self) -> Array:
        """Fold the adapter into a standalone matrix."""
        with no_grad():
            return self.effective_weight().data.copy()

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def load_state(self, state: Mapping[str, Array]) -> None:
        """Overwrite learnable parameters from arrays keyed like :meth:`parameters`."""
        params = self.parameters()
        if unknown := sorted(set(state) - set(params)):
            raise UnknownParameterError(kind=self.kind, names=unknown)
        for name, value in state.items():
            params[name].assign_(value)


def adapter_forward(adapter: Adapter, x: Tensor) -> Tensor:
    return adapter.forward(x)


class LoRaDAdapter(Adapter):
    """Rotates the columns of the base weight by angles ``A @ B``.

    ``A`` starts as small Gaussian noise and ``B`` at zero, so training starts at the identity
    rotation. The rotated weight is cached outside of gradient recording and keyed on the
    factors' versions.
    """

    kind = enums.AdapterKindEnum.lorad

    def __init__(self, weight: Array, rank: int, *, rng: np.random.Generator, init_std: float = 1e-3) -> None:
        super().__init__(weight)
        if self.d % 2:
            raise OddDimensionError(rows=self.d)
        max_rank = min(self.d // 2, self.k)
        if not 1 <= rank <= max_rank:
            raise InvalidRankError(rank=rank, max_rank=max_rank)
        self.rank = rank
        dtype = self.base.dtype
        self.A = Tensor(rng.normal(0.0, init_std, size=(self.d // 2, rank)), dtype=dtype, requires_grad=True)
        self.B = Tensor(np.zeros((rank, self.k)), dtype=dtype, requires_grad=True)
        self._cache: tuple[tuple[int, int, int, int], Tensor] | None = None

    @override
    def parameters(self) -> dict[str, Tensor]:
        return {"A": self.A, "B": self.B}

    def angles(self) -> Tensor:
        return lorad_angles(self.A, self.B)

    @override
    def effective_weight(self) -> Tensor:
        stamp = (id(self.A), self.A.version, id(self.B), self.B.version)
        if is_grad_enabled():
            return rotate_fast(self.base, self.angles())
        if self._cache is None or self._cache[0] != stamp:
            self._cache = (stamp, rotate_fast(self.base, self.angles()))
        return self._cache[1]


class LoRAAdapter(Adapter):
    """Adds ``scaling * A @ B`` to the base weight, with ``B`` starting at zero."""

    kind = enums.AdapterKindEnum.lora

    def __init__(
        self,
        weight: Array,
        rank: int,
        *,
        rng: np.random.Generator,
        scaling: float | None = None,
    ) -> None:
        super().__init__(weight)
        max_rank = min(self.d, self.k)
        if not 1 <= rank <= max_rank:
            raise InvalidRankError(rank=rank, max_rank=max_rank)
        self.rank = rank
        self.scaling = 1.0 / rank if scaling is None else scaling
        dtype = self.base.dtype
        self.A = Tensor(rng.normal(0.0, 1.0 / np.sqrt(rank), size=(self.d, rank)), dtype=dtype, requires_grad=True)
        self.B = Tensor(np.zeros((rank, self.k)), dtype=dtype, requires_grad=True)

    @override
    def parameters(self) -> dict[str, Tensor]:
        return {"A": self.A, "B": self.B}

    def delta(self) -> Tensor:
        return F.scale(F.matmul(self.A, self.B), self.scaling)

    @override
    def effective_weight(self) -> Tensor:
        return F.add(self.base, self.delta())


class DoRAAdapter(LoRAAdapter):
    """Magnitude times the column-normalized LoRA-updated weight.

    The column norms in the denominator are treated as constants during backpropagation. With
    ``frozen_norm`` the magnitude stays at the base column norms and is not learnable.
    """

    kind = enums.AdapterKindEnum.dora

    def __init__(
        self,
        weight: Array,
        rank: int,
        *,
        rng: np.random.Generator,
        scaling: float | None = None,
        frozen_norm: bool = False,
    ) -> None:
        super().__init__(weight, rank, rng=rng, scaling=scaling)
        self.frozen_norm = frozen_norm
        norms = np.linalg.norm(self.base.data, axis=0, keepdims=True)
        self.m = Tensor(norms, dtype=self.base.dtype, requires_grad=not frozen_norm)

    @override
    def parameters(self) -> dict[str, Tensor]:
        params = super().parameters()
        if not self.frozen_norm:
            params["m"] = self.m
        return params

    @override
    def effective_weight(self) -> Tensor:
        directional = F.add(self.base, self.delta())
        norms = F.clamp_min(F.reduce(enums.ReduceOp.l2norm, directional.detach(), axis=0, keepdims=True), DORA_NORM_FLOOR)
        return F.mul(directional, F.broadcast_to(F.div(self.m, norms), directional.shape))


class DoRAFrozenNormAdapter(DoRAAdapter):
    kind = enums.AdapterKindEnum.dora_frozen_norm

    def __init__(self, weight: Array, rank: int, *, rng: np.random.Generator, scaling: float | None = None) -> None:
        super().__init__(weight, rank, rng=rng, scaling=scaling, frozen_norm=True)


class FTAdapter(Adapter):
    """Learnable copy of the whole weight."""

    kind = enums.AdapterKindEnum.ft

    def __init__(self, weight: Array) -> None:
        super().__init__(weight)
        self.weight = Tensor(self.base.data, dtype=self.base.dtype, requires_grad=True)

    @override
    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight}

    @override
    def effective_weight(self) -> Tensor:
        return self.weight


def max_rank(kind: enums.AdapterKindEnum, d: int, k: int) -> int:
    match kind:
        case enums.AdapterKindEnum.lorad:
            return min(d // 2, k)
        case enums.AdapterKindEnum.lora | enums.AdapterKindEnum.dora | enums.AdapterKindEnum.dora_frozen_norm:
            return min(d, k)
        case enums.AdapterKindEnum.ft:
            return d * k
        case _:
            assert_never(kind)


def build_adapter(
    kind: enums.AdapterKindEnum,
    weight: Array,
    rank: int,
    rng: np.random.Generator,
    *,
    name: str = "",
) -> Adapter:
    """Wrap ``weight`` in an adapter of the given kind.

    Ranks larger than the layer supports are clamped with a warning.
    """
    d, k = weight.shape
    limit = max_rank(kind, d, k)
    if rank > limit:
        logger.warning(
            "Clamping %s rank of layer %s from %d to %d",
            kind,
            name or "?",
            rank,
            limit,
            extra={"layer": name, "requested_rank": rank, "rank": limit},
        )
        rank = limit

    match kind:
        case enums.AdapterKindEnum.lorad:
            return LoRaDAdapter(weight, rank, rng=rng)
        case enums.AdapterKindEnum.lora:
            return LoRAAdapter(weight, rank, rng=rng)
        case enums.AdapterKindEnum.dora:
            return DoRAAdapter(weight, rank, rng=rng)
        case enums.AdapterKindEnum.dora_frozen_norm:
            return DoRAFrozenNormAdapter(weight, rank, rng=rng)
        case enums.AdapterKindEnum.ft:
            return FTAdapter(weight)
        case _:
            assert_never(kind)
