"""Spatial pyramid pooling of per-descriptor codes into one image vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

POOLINGS = ("max", "sum_histogram")
FINAL_NORMS = ("l2", "none")


@dataclass(frozen=True)
class PyramidParams:
    """Pyramid levels and pooling; ``pooling=None`` defers to the encoder."""

    levels: tuple[int, ...] = (0, 1, 2)
    pooling: str | None = None
    final_norm: str = "l2"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(l) for l in self.levels))
        if not self.levels or min(self.levels) < 0:
            raise InvalidInputError("levels must be a nonempty list of l >= 0")
        if self.pooling is not None and self.pooling not in POOLINGS:
            raise InvalidInputError(f"unknown pooling {self.pooling!r}")
        if self.final_norm not in FINAL_NORMS:
            raise InvalidInputError(f"unknown final_norm {self.final_norm!r}")

    @property
    def n_blocks(self) -> int:
        return sum(4**l for l in self.levels)

    def dimension(self, k: int) -> int:
        return k * self.n_blocks


@dataclass(frozen=True, eq=False)
class PyramidFeature:
    """Concatenated per-block segments of length k.

    Segments are ordered by level (as listed) then row-major block index.
    """

    values: np.ndarray
    k: int
    levels: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def segment(self, level: int, block_row: int, block_col: int) -> np.ndarray:
        offset = 0
        for l in self.levels:
            if l == level:
                b = block_row * 2**l + block_col
                return self.values[(offset + b) * self.k : (offset + b + 1) * self.k]
            offset += 4**l
        raise KeyError(level)


def assign_blocks(positions, image_size: tuple[int, int], level: int) -> np.ndarray:
    """Row-major block index of each ``(x, y)`` position at ``level``."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    w, h = image_size
    if pos.size and (pos.min() < 0 or np.any(pos[:, 0] >= w) or np.any(pos[:, 1] >= h)):
        raise InvalidInputError("position outside the image")
    g = 2**level
    col = np.minimum(np.floor(pos[:, 0] * g / w).astype(np.int64), g - 1)
    row = np.minimum(np.floor(pos[:, 1] * g / h).astype(np.int64), g - 1)
    return row * g + col


def _codes(C) -> np.ndarray:
    return np.asarray(getattr(C, "codes", C), dtype=np.float64)


def _pool(A: np.ndarray, positions, image_size, params: PyramidParams, reduce) -> np.ndarray:
    if A.shape[1] != np.asarray(positions).reshape(-1, 2).shape[0]:
        raise InvalidInputError("code count differs from position count")
    k = A.shape[0]
    segments = []
    for l in params.levels:
        blocks = assign_blocks(positions, image_size, l)
        for b in range(4**l):
            members = A[:, blocks == b]
            segments.append(reduce(members) if members.shape[1] else np.zeros(k))
    out = np.concatenate(segments)
    if params.final_norm == "l2":
        norm = np.linalg.norm(out)
        if norm > 0:
            out = out / norm
    return out


def max_pool(C, positions, image_size, params: PyramidParams = PyramidParams()) -> PyramidFeature:
    """Per-block, per-dimension maximum of absolute code values."""
    A = np.abs(_codes(C))
    values = _pool(A, positions, image_size, params, lambda M: M.max(axis=1))
    return PyramidFeature(values, A.shape[0], params.levels)


def _sorted_sum(M: np.ndarray) -> np.ndarray:
    # summing sorted rows makes the result independent of descriptor order
    return np.sort(M, axis=1).sum(axis=1)


def sum_pool_histogram(C, positions, image_size, params: PyramidParams = PyramidParams()) -> PyramidFeature:
    """Per-block code sums divided by the image's total descriptor count."""
    A = _codes(C)
    n = max(A.shape[1], 1)
    values = _pool(A, positions, image_size, params, lambda M: _sorted_sum(M) / n)
    return PyramidFeature(values, A.shape[0], params.levels)


def pool(C, field, params: PyramidParams, default_pooling: str = "max") -> PyramidFeature:
    """Pool codes of a :class:`~lrrspm.features.DescriptorField`."""
    how = params.pooling or default_pooling
    fn = max_pool if how == "max" else sum_pool_histogram
    return fn(C, field.positions, field.image_size, params)
