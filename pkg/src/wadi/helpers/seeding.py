from __future__ import annotations

import zlib

import numpy as np


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode())


class SeedStreams:
    """Independent random generators derived from one root seed.

    Each consumer asks for a generator by name, so adding draws to one stream leaves every other
    stream untouched.
    """

    def __init__(self, seed: int, *, path: tuple[str, ...] = ()) -> None:
        self.seed = seed
        self.path = path

    def generator(self, name: str) -> np.random.Generator:
        key = tuple(_stream_key(part) for part in (*self.path, name))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def child(self, name: str) -> SeedStreams:
        """Streams scoped under ``name``."""
        return SeedStreams(self.seed, path=(*self.path, name))

    def __repr__(self) -> str:
        return f"SeedStreams(seed={self.seed}, path={'/'.join(self.path) or '-'})"
