"""Low-rank rotation adapter and its baselines."""

from __future__ import annotations

from wadi.adapters.layers import (
    Adapter,
    DoRAAdapter,
    DoRAFrozenNormAdapter,
    FTAdapter,
    InvalidRankError,
    LoRAAdapter,
    LoRaDAdapter,
    UnknownParameterError,
    adapter_forward,
    build_adapter,
    max_rank,
)
from wadi.adapters.rotation import OddDimensionError, lorad_angles, rotate_fast, rotate_reference

__all__ = [
    "Adapter",
    "DoRAAdapter",
    "DoRAFrozenNormAdapter",
    "FTAdapter",
    "InvalidRankError",
    "LoRAAdapter",
    "LoRaDAdapter",
    "OddDimensionError",
    "UnknownParameterError",
    "adapter_forward",
    "build_adapter",
    "lorad_angles",
    "max_rank",
    "rotate_fast",
    "rotate_reference",
]
