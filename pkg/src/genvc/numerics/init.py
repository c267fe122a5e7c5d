"""Seeded parameter initializers. All draws go through one explicit rng."""

from __future__ import annotations

import numpy as np


def fanin_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Uniform on [-sqrt(6/fan_in), sqrt(6/fan_in)].

    Keeps activation variance roughly constant through ReLU-family layers;
    fanin_uniform loses a factor ~2 per layer there, which starves deep
    stacks of signal.
    """
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def small_uniform(rng: np.random.Generator, shape: tuple, scale: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Uniform with standard deviation `scale`; used for embeddings and heads."""
    bound = scale * np.sqrt(3.0)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def zeros(shape: tuple, dtype=np.float32) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def ones(shape: tuple, dtype=np.float32) -> np.ndarray:
    return np.ones(shape, dtype=dtype)
