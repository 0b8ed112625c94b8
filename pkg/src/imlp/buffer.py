"""Fixed-capacity FIFO of detached latent prototypes."""

from __future__ import annotations

from collections import deque
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBufferError, EmptySegmentError, ShapeError
from .linalg import DTYPE, l2_normalize


class FeatureBuffer:
    """Sliding window over the most recent ``capacity`` prototype vectors.

    Entries are stored oldest first as read-only value copies, so later
    changes to model parameters (or to the array that was pushed) cannot
    reach them.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError(f"capacity and dim must be >= 1, got {capacity}, {dim}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._entries: deque[np.ndarray] = deque(maxlen=self.capacity)

    def push(self, feature) -> "FeatureBuffer":
        feature = np.array(feature, dtype=DTYPE, copy=True).reshape(-1)
        if feature.shape[0] != self.dim:
            raise ShapeError(f"buffer dim is {self.dim}, got feature of length {feature.shape[0]}")
        feature.setflags(write=False)
        # deque(maxlen) drops the single oldest entry on overflow
        self._entries.append(feature)
        return self

    @property
    def entries(self) -> list[np.ndarray]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def is_empty(self) -> bool:
        return not self._entries

    def as_matrix(self) -> np.ndarray:
        """Entries as a ``(fill, dim)`` matrix, oldest row first."""
        if not self._entries:
            return np.zeros((0, self.dim), dtype=DTYPE)
        return np.stack(self._entries)

    def stacked(self, batch: int) -> np.ndarray:
        """Replicate entries across a batch axis: ``(batch, fill, dim)``."""
        if not self._entries:
            raise EmptyBufferError("buffer is empty; attention must take the inactive path")
        mat = self.as_matrix()
        return np.broadcast_to(mat, (batch,) + mat.shape).copy()

    def nbytes(self) -> int:
        return sum(e.nbytes for e in self._entries)

    def copy(self) -> "FeatureBuffer":
        out = FeatureBuffer(self.capacity, self.dim)
        out._entries.extend(self._entries)
        return out

    @classmethod
    def from_entries(cls, capacity: int, dim: int, entries: Iterable) -> "FeatureBuffer":
        buf = cls(capacity, dim)
        for e in entries:
            buf.push(e)
        return buf

    def __repr__(self) -> str:
        return f"FeatureBuffer(capacity={self.capacity}, dim={self.dim}, fill={len(self)})"


def segment_prototype(features: Sequence | np.ndarray, normalize: bool = True, eps: float = 1e-8) -> np.ndarray:
    """Mean of a segment's penultimate features, optionally l2-normalized."""
    feats = np.asarray(features, dtype=DTYPE)
    if feats.size == 0 or feats.shape[0] == 0:
        raise EmptySegmentError("cannot build a prototype from an empty segment")
    if feats.ndim != 2:
        raise ShapeError(f"features must be a list of equal-length vectors, got shape {feats.shape}")
    proto = feats.mean(axis=0)
    if normalize:
        proto = l2_normalize(proto, eps)
    return proto
