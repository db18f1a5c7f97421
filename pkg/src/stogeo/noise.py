"""Reproducible Brownian increments.

Each ``(seed, path_index)`` pair owns an independent counter-based Philox
stream, so any subset of an ensemble can be regenerated bit-exactly and in
any order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_STREAM = 1


def path_rng(seed: int, path_index: int, stream: int = NOISE_STREAM) -> np.random.Generator:
    if seed < 0 or path_index < 0:
        raise ValueError("seed and path_index must be non-negative")
    ss = np.random.SeedSequence([int(seed), int(path_index), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def brownian_increments(seed: int, path_index: int, n_steps: int, dim: int, dt: float) -> np.ndarray:
    """``(n_steps, dim)`` array of independent N(0, dt) increments."""
    return path_rng(seed, path_index).standard_normal((n_steps, dim)) * np.sqrt(dt)


def ensemble_increments(seed: int, path_indices, n_steps: int, dim: int, dt: float) -> np.ndarray:
    path_indices = np.asarray(path_indices, dtype=np.int64)
    out = np.empty((len(path_indices), n_steps, dim))
    for row, p in enumerate(path_indices):
        out[row] = brownian_increments(seed, int(p), n_steps, dim, dt)
    return out


@dataclass
class NoisePath:
    """Driving noise of one sample path on a uniform grid."""

    times: np.ndarray
    dx: np.ndarray
    seed: int
    path_index: int

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def x(self) -> np.ndarray:
        """Brownian path values at the grid nodes, starting from 0."""
        return np.concatenate([np.zeros((1, self.dx.shape[1])), np.cumsum(self.dx, axis=0)])

    @classmethod
    def generate(cls, seed: int, path_index: int, T: float, dt: float, dim: int) -> "NoisePath":
        n = max(1, int(np.ceil(T / dt - 1e-9)))
        h = T / n
        return cls(np.linspace(0.0, T, n + 1), brownian_increments(seed, path_index, n, dim, h), seed, path_index)
