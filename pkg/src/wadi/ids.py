from __future__ import annotations

from typing import NamedTuple

from wadi import enums, exceptions


class InvalidTensorNameError(exceptions.BadParameterError):
    """Invalid tensor name error."""

    def __init__(self, *, name: str) -> None:
        super().__init__(f"'{name}' is not a valid tensor name, expected '<layer>.<param>' or '<layer>.<kind>.<param>'")


class TensorName(NamedTuple):
    """Name of a persisted tensor.

    Plain model tensors are ``<layer>.<param>`` (``fc1.weight``), adapter factors are
    ``<layer>.<kind>.<param>`` (``fc1.lorad.A``).
    """

    layer: str
    param: str
    kind: enums.AdapterKindEnum | None = None

    def as_checkpoint_name(self) -> str:
        if self.kind is None:
            return f"{self.layer}.{self.param}"
        return f"{self.layer}.{self.kind.value}.{self.param}"

    @property
    def is_weight(self) -> bool:
        return self.kind is None and self.param == "weight"

    @classmethod
    def from_checkpoint_name(cls, name: str) -> TensorName:
        """Parse a checkpoint tensor name.

        Args:
            name: Name as stored in a checkpoint.

        Returns:
            Tensor name.

        Raises:
            InvalidTensorNameError: If the name has neither two nor three parts.
        """
        parts = name.split(".")
        if len(parts) == 2 and all(parts):  # noqa: PLR2004
            return cls(layer=parts[0], param=parts[1])

        if len(parts) == 3 and all(parts):  # noqa: PLR2004
            try:
                kind = enums.AdapterKindEnum(parts[1])
            except ValueError:
                raise InvalidTensorNameError(name=name) from None
            return cls(layer=parts[0], param=parts[2], kind=kind)

        raise InvalidTensorNameError(name=name)
