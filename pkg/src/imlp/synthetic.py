"""Synthetic tabular streams for tests and desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .data import stratified_split
from .trainer import StreamSegment


def _split_segment(index, x, y, train_fraction, seed) -> StreamSegment:
    tr, te = stratified_split(y, train_fraction, seed=[seed, index])
    return StreamSegment(index, x[tr], y[tr], x[te], y[te])


def drifting_gaussian_stream(
    n_segments: int = 10,
    rows_per_segment: int = 600,
    n_features: int = 10,
    separation: float = 3.0,
    drift: float = 0.3,
    noise_features: int = 0,
    train_fraction: float = 0.85,
    seed: int = 0,
) -> list[StreamSegment]:
    """Two isotropic Gaussian classes whose shared centre drifts each segment.

    Class means sit at ``centre +/- separation/2 * u`` for a fixed unit
    direction ``u``; the centre moves by ``drift`` per segment along a
    direction orthogonal to ``u``, so the optimal boundary translates but
    keeps its orientation.
    """
    rng = np.random.default_rng(seed)
    d = n_features
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    v = rng.normal(size=d)
    v -= v.dot(u) * u
    v /= np.linalg.norm(v)
    stream = []
    for t in range(n_segments):
        centre = drift * t * v
        y = rng.integers(0, 2, size=rows_per_segment)
        x = rng.normal(size=(rows_per_segment, d)) + centre + np.where(y[:, None] == 1, 0.5, -0.5) * separation * u
        if noise_features:
            x = np.hstack([x, rng.normal(size=(rows_per_segment, noise_features))])
        stream.append(_split_segment(t, x, y, train_fraction, seed))
    return stream


def recurring_concept_stream(
    n_segments: int = 12,
    rows_per_segment: int = 600,
    n_features: int = 8,
    period: int = 4,
    train_fraction: float = 0.85,
    seed: int = 0,
) -> list[StreamSegment]:
    """Stream whose segment ``t`` is drawn from the same concept as ``t - period``.

    Each concept has its own input region and its own labelling hyperplane
    through that region, so a concept's rule must be recalled when it
    recurs.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(scale=2.0, size=(period, n_features))
    normals = rng.normal(size=(period, n_features))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    stream = []
    for t in range(n_segments):
        k = t % period
        x = centres[k] + rng.normal(size=(rows_per_segment, n_features))
        y = ((x - centres[k]) @ normals[k] > 0).astype(np.int64)
        stream.append(_split_segment(t, x, y, train_fraction, seed))
    return stream


def uniform_stream(
    n_segments: int = 20,
    rows_per_segment: int = 600,
    n_features: int = 10,
    n_classes: int = 2,
    train_fraction: float = 0.85,
    seed: int = 0,
) -> list[StreamSegment]:
    """Equal-size segments with a fixed linear concept (cost experiments)."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n_features, n_classes))
    stream = []
    for t in range(n_segments):
        x = rng.normal(size=(rows_per_segment, n_features))
        y = np.argmax(x @ w, axis=1).astype(np.int64)
        stream.append(_split_segment(t, x, y, train_fraction, seed))
    return stream
