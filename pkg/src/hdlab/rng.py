"""Counter-based random streams.

Every path owns one Philox stream keyed by ``(seed, stream)``; the k-th
Gaussian drawn from it belongs to step k.  Batches of paths use consecutive
stream ids, so splitting a batch across workers never changes a single
number.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence, TypeVar

import numpy as np

_U64 = 1 << 64
T = TypeVar("T")


@dataclass(frozen=True)
class RngSpec:
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 0 <= v < _U64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(int(self.stream) << 64) | int(self.seed)))

    def substream(self, i: int) -> "RngSpec":
        return RngSpec(self.seed, (self.stream + i) % _U64)

    def streams(self, count: int) -> List["RngSpec"]:
        return [self.substream(i) for i in range(count)]


def batch_normals(rng: RngSpec, n_paths: int, shape: Sequence[int]) -> np.ndarray:
    """Standard normals of shape ``(n_paths, *shape)``, one stream per path."""
    shape = tuple(shape)
    out = np.empty((n_paths,) + shape)
    for i in range(n_paths):
        out[i] = rng.substream(i).generator().standard_normal(shape)
    return out


def chunk_ranges(total: int, chunk: int):
    """``(start, stop)`` pairs covering ``range(total)`` in order."""
    return [(s, min(s + chunk, total)) for s in range(0, total, chunk)]


def ordered_map(func: Callable[..., T], items: Sequence, workers: int = 1) -> List[T]:
    """Map preserving input order; results never depend on ``workers``."""
    if workers <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
