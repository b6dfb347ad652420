"""Seeded synthetic classification tasks (no downloads)."""

from __future__ import annotations

from typing import Callable, Dict, Tuple

import numpy as np


def blobs(n: int = 400, seed: int = 7, spread: float = 0.6) -> Tuple[np.ndarray, np.ndarray]:
    """Two 2-D Gaussian clusters centred at (0.3, 0.3) and (1.2, 1.2)."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centres = np.array([[0.3, 0.3], [1.2, 1.2]])
    x = centres[y] + rng.normal(0.0, spread / 2, size=(n, 2))
    perm = rng.permutation(n)
    return x[perm], y[perm]


def rings(n: int = 400, seed: int = 7) -> Tuple[np.ndarray, np.ndarray]:
    """Inner disc versus outer ring in 2-D."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    radius = np.where(y == 0, rng.uniform(0.0, 0.5, n), rng.uniform(0.8, 1.2, n))
    angle = rng.uniform(0.0, 2 * np.pi, n)
    x = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return x, y


def bars(n: int = 400, seed: int = 7, size: int = 8, noise: float = 0.15) -> Tuple[np.ndarray, np.ndarray]:
    """``[n, 1, size, size]`` images holding one horizontal (0) or vertical (1) bar."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.uniform(0.0, noise, size=(n, 1, size, size))
    pos = rng.integers(1, size - 1, n)
    for i in range(n):
        if y[i] == 0:
            x[i, 0, pos[i], :] += rng.uniform(0.6, 1.0)
        else:
            x[i, 0, :, pos[i]] += rng.uniform(0.6, 1.0)
    return x, y


TASKS: Dict[str, Callable[..., Tuple[np.ndarray, np.ndarray]]] = {
    "blobs": blobs,
    "rings": rings,
    "bars": bars,
}
