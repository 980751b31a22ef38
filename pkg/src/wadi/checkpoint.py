"""Binary tensor checkpoints.

Layout, little-endian throughout::

    b"WADI" | version: u32 | count: u64
    per tensor: name length: u32 | UTF-8 name | dtype code: u32 | rank: u32 | dims: u64 * rank | payload

The payload is the row-major element data. Dtype codes are 0 for float32 and 1 for float64.
"""

from __future__ import annotations

import math
import struct
from typing import TYPE_CHECKING

import numpy as np

from wadi import enums, exceptions, ids
from wadi.analysis import WeightSnapshot
from wadi.autodiff.tensor import dtype_of, numpy_dtype
from wadi.diffusion.datasets import Normalization
from wadi.diffusion.denoiser import Denoiser

if TYPE_CHECKING:
    from collections.abc import Mapping
    from pathlib import Path

    from wadi.autodiff.tensor import Array
    from wadi.schemas.config import ModelConfig

MAGIC = b"WADI"
VERSION = 1

_HEADER = struct.Struct("<4sIQ")
_U32 = struct.Struct("<I")
_DTYPE_CODES = {enums.DType.float32: 0, enums.DType.float64: 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}

DATA_MEAN = ids.TensorName("data", "mean").as_checkpoint_name()
DATA_SCALE = ids.TensorName("data", "scale").as_checkpoint_name()


class CheckpointNotFoundError(exceptions.NotFoundError):
    def __init__(self, *, path: Path) -> None:
        super().__init__(f"checkpoint '{path}' does not exist")


class CorruptCheckpointError(exceptions.BadParameterError):
    """Bytes that do not follow the checkpoint layout."""

    def __init__(self, *, reason: str) -> None:
        super().__init__(f"corrupt checkpoint: {reason}")


class EmptyDimensionError(exceptions.BadParameterError):
    """Tensor with a zero-sized dimension."""

    def __init__(self, *, name: str, shape: tuple[int, ...]) -> None:
        super().__init__(f"tensor '{name}' has an empty dimension: {shape}")


class DuplicateTensorError(exceptions.BadParameterError):
    def __init__(self, *, name: str) -> None:
        super().__init__(f"tensor '{name}' appears more than once")


class MissingTensorError(exceptions.NotFoundError):
    def __init__(self, *, names: list[str]) -> None:
        super().__init__(f"checkpoint lacks tensor(s) {', '.join(names)}")


def dumps(tensors: Mapping[str, Array]) -> bytes:
    """Serialize named float tensors.

    Raises:
        EmptyDimensionError: If a tensor has a zero-sized dimension.
        UnsupportedDTypeError: If a tensor is not float32 or float64.
    """
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, array in tensors.items():
        if 0 in array.shape:
            raise EmptyDimensionError(name=name, shape=tuple(array.shape))
        dtype = dtype_of(array)
        encoded = name.encode()
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<II{array.ndim}Q", _DTYPE_CODES[dtype], array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=numpy_dtype(dtype).newbyteorder("<")).tobytes())
    return b"".join(chunks)


def loads(data: bytes) -> dict[str, Array]:
    """Parse bytes written by :func:`dumps`.

    Raises:
        CorruptCheckpointError: If the bytes do not follow the layout.
        EmptyDimensionError: If a stored tensor has a zero-sized dimension.
        DuplicateTensorError: If a name repeats.
    """
    view = memoryview(data)
    try:
        magic, version, count = _HEADER.unpack_from(view, 0)
        if magic != MAGIC:
            raise CorruptCheckpointError(reason=f"bad magic {bytes(magic)!r}")
        if version != VERSION:
            raise CorruptCheckpointError(reason=f"unsupported version {version}")

        offset = _HEADER.size
        tensors: dict[str, Array] = {}
        for _ in range(count):
            (name_length,) = _U32.unpack_from(view, offset)
            offset += _U32.size
            name = bytes(view[offset : offset + name_length]).decode()
            offset += name_length
            code, rank = struct.unpack_from("<II", view, offset)
            offset += 8
            shape = struct.unpack_from(f"<{rank}Q", view, offset)
            offset += 8 * rank

            if code not in _CODE_DTYPES:
                raise CorruptCheckpointError(reason=f"unknown dtype code {code} for '{name}'")
            if 0 in shape:
                raise EmptyDimensionError(name=name, shape=shape)
            if name in tensors:
                raise DuplicateTensorError(name=name)

            dtype = numpy_dtype(_CODE_DTYPES[code])
            count_elements = math.prod(shape)
            size = count_elements * dtype.itemsize
            if offset + size > len(view):
                raise CorruptCheckpointError(reason=f"payload of '{name}' is truncated")
            payload = np.frombuffer(view, dtype=dtype.newbyteorder("<"), count=count_elements, offset=offset)
            tensors[name] = payload.astype(dtype).reshape(shape)
            offset += size
    except (struct.error, ValueError) as e:
        raise CorruptCheckpointError(reason=str(e)) from e

    if offset != len(view):
        raise CorruptCheckpointError(reason=f"{len(view) - offset} trailing bytes")
    return tensors


def save(path: Path, tensors: Mapping[str, Array]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(tensors))


def load(path: Path) -> dict[str, Array]:
    if not path.is_file():
        raise CheckpointNotFoundError(path=path)
    return loads(path.read_bytes())


def save_model(path: Path, model: Denoiser, normalization: Normalization) -> None:
    """Store merged model weights with the data normalization."""
    tensors = model.state()
    tensors[DATA_MEAN] = np.asarray(normalization.mean, dtype=np.float64)
    tensors[DATA_SCALE] = np.asarray(normalization.scale, dtype=np.float64)
    save(path, tensors)


def load_model(path: Path, config: ModelConfig) -> tuple[Denoiser, Normalization]:
    """Rebuild a plain denoiser and its data normalization.

    Raises:
        CheckpointNotFoundError: If the file does not exist.
        MissingTensorError: If the normalization constants are absent.
        ArchitectureMismatchError: If the weights do not fit ``config``.
    """
    tensors = load(path)
    if missing := [name for name in (DATA_MEAN, DATA_SCALE) if name not in tensors]:
        raise MissingTensorError(names=missing)
    normalization = Normalization(mean=tensors.pop(DATA_MEAN), scale=tensors.pop(DATA_SCALE))
    return Denoiser.from_state(tensors, config), normalization


def load_snapshot(path: Path) -> WeightSnapshot:
    return WeightSnapshot.from_named_tensors(load(path))
