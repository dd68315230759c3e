"""Seeded random streams.

Every random draw in the package comes from numpy's Philox 4x64 counter-based
bit generator. Uniforms on [0, 1) are ``(next_uint64 >> 11) * 2**-53``
(numpy's ``Generator.random``); normals use the Box-Muller cosine branch on a
pair of such uniforms, so the stream is reproducible from the seed alone.
"""
from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "uniform", "normal"]


def make_rng(seed: int | None) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(0 if seed is None else int(seed)))


def uniform(rng: np.random.Generator, low: float, high: float, size: int) -> np.ndarray:
    return low + (high - low) * rng.random(size)


def normal(rng: np.random.Generator, mean: float, sd: float, size: int) -> np.ndarray:
    u = rng.random((2, size))
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u in (0, 1]
    return mean + sd * radius * np.cos(2.0 * np.pi * u[1])
