"""Deterministic point sets for sampling-based falsification.

All samplers are pure functions of their arguments: repeated calls return
identical arrays, so every report built on them is reproducible.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = ["halton", "box_corners", "box_sample", "face_sample"]

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


def _radical_inverse(index: int, base: int) -> float:
    inv = 0.0
    factor = 1.0 / base
    while index > 0:
        index, digit = divmod(index, base)
        inv += digit * factor
        factor /= base
    return inv


def halton(dim: int, count: int) -> np.ndarray:
    """First `count` Halton points in [0, 1)^dim, skipping the origin."""
    if dim > len(_PRIMES):
        raise ValueError(f"dimension {dim} exceeds supported maximum {len(_PRIMES)}")
    out = np.empty((count, dim))
    for j in range(dim):
        base = _PRIMES[j]
        for i in range(count):
            out[i, j] = _radical_inverse(i + 1, base)
    return out


def box_corners(dim: int, bound: float) -> np.ndarray:
    """All 2^dim corners of [0, bound]^dim in lexicographic order."""
    corners = np.array(list(itertools.product((0.0, float(bound)), repeat=dim)))
    return corners.reshape(-1, dim)


def box_sample(dim: int, bound: float, count: int) -> np.ndarray:
    """Corners first (lexicographic), then `count` Halton points scaled to
    [0, bound]^dim."""
    return np.vstack([box_corners(dim, bound), bound * halton(dim, count)])


def face_sample(dim: int, bound: float, pinned: int, pinned_value: float,
                count: int) -> np.ndarray:
    """Sample the face of [0, bound]^dim where coordinate `pinned` (1-based)
    equals `pinned_value`: face corners first, then Halton fill."""
    if dim == 1:
        return np.array([[pinned_value]])
    base = box_sample(dim - 1, bound, count)
    out = np.empty((base.shape[0], dim))
    j = pinned - 1
    out[:, :j] = base[:, :j]
    out[:, j] = pinned_value
    out[:, j + 1:] = base[:, j:]
    return out
