"""Patch-order shuffling for building the conflict-dominant image input.

Permutations come from a SplitMix64 generator driving an unbiased
Fisher-Yates shuffle. Both are specified bit-for-bit here rather than
borrowed from numpy, whose generator streams are not guaranteed stable
across releases, so a ``(n, seed)`` pair names the same permutation on
every platform and version.
"""

from __future__ import annotations

import functools
import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusError, LengthMismatch, NonFiniteError, RangeError

MASK64 = (1 << 64) - 1


class SplitMix64:
    """Minimal SplitMix64 stream (Steele, Lea & Flood 2014)."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection sampling."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound


@functools.lru_cache(maxsize=4096)
def permutation_from_seed(n: int, seed: int) -> tuple[int, ...]:
    """Uniform permutation of ``range(n)`` determined entirely by ``seed``."""
    if n < 1:
        raise RangeError("n", "permutation size must be >= 1")
    rng = SplitMix64(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return tuple(perm)


def derive_seed(base_seed: int, key) -> int:
    """Mix a per-sample key into ``base_seed`` (XOR with a stable 64-bit hash)."""
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "little")) & MASK64


def patch_grid(rows) -> np.ndarray:
    """Validate an N x D grid of patch embeddings and freeze it."""
    grid = np.array(rows, dtype=np.float64, copy=True)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise LengthMismatch(f"patch grid must be N x D with N, D >= 1, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise NonFiniteError("patch grid contains non-finite entries")
    grid.setflags(write=False)
    return grid


def shuffle_patches(grid: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Reorder whole patch rows: output row ``i`` is input row ``perm[i]``."""
    grid = np.asarray(grid)
    if len(perm) != grid.shape[0]:
        raise LengthMismatch(f"permutation of length {len(perm)} for {grid.shape[0]} patches")
    out = grid[np.asarray(perm, dtype=np.int64)]
    out.setflags(write=False)
    return out


def is_identity(perm: Iterable[int]) -> bool:
    return all(i == p for i, p in enumerate(perm))


# -- serialization ----------------------------------------------------------
#
# JSON: {"format": "json", "n": N, "d": D, "patches": [[...], ...]}
# binary: N*D little-endian float64 values, row-major; N and D come from the
# referencing corpus record header {"format": "bin", "n", "d", "path"}.


def grid_to_json(grid: np.ndarray) -> dict:
    n, d = grid.shape
    return {"format": "json", "n": int(n), "d": int(d), "patches": grid.tolist()}


def write_grid_bin(grid: np.ndarray, path: str | Path) -> dict:
    n, d = grid.shape
    Path(path).write_bytes(np.ascontiguousarray(grid, dtype="<f8").tobytes())
    return {"format": "bin", "n": int(n), "d": int(d), "path": str(path)}


def read_grid(header: dict, base_dir: str | Path | None = None) -> np.ndarray:
    """Load a patch grid described by a corpus image header."""
    fmt = header.get("format", "json")
    try:
        n, d = int(header["n"]), int(header["d"])
    except (KeyError, TypeError, ValueError):
        raise CorpusError("image header must declare integer 'n' and 'd'") from None
    if fmt == "json":
        if "patches" in header:
            rows = header["patches"]
        else:
            rows = json.loads(_resolve(header["path"], base_dir).read_text(encoding="utf-8"))
        grid = patch_grid(rows)
    elif fmt == "bin":
        raw = _resolve(header["path"], base_dir).read_bytes()
        if len(raw) != n * d * 8:
            raise CorpusError(f"binary patch file has {len(raw)} bytes, expected {n * d * 8}")
        grid = patch_grid(np.frombuffer(raw, dtype="<f8").reshape(n, d))
    else:
        raise CorpusError(f"unknown patch grid format {fmt!r}")
    if grid.shape != (n, d):
        raise CorpusError(f"declared {n}x{d} grid but found {grid.shape[0]}x{grid.shape[1]}")
    return grid


def _resolve(path: str, base_dir) -> Path:
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def grid_digest(grid: np.ndarray) -> str:
    """Stable content hash of a grid (shape plus row-major float64 bytes)."""
    h = hashlib.sha256(struct.pack("<qq", *grid.shape))
    h.update(np.ascontiguousarray(grid, dtype="<f8").tobytes())
    return h.hexdigest()
