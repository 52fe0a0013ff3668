"""Seeded synthetic EM-like cubes: smooth background plus dark membranes
and filaments."""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .volume import save_v3d


def _unit(x):
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def synth_cube(shape=(16, 16, 16), seed=0, membranes=True, filaments=3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    shape = tuple(shape)
    background = _unit(gaussian_filter(rng.normal(size=shape), 2.0, mode="wrap"))
    img = 90.0 + 110.0 * background
    if membranes:
        # thin sheets along the zero set of a second smooth field
        field = gaussian_filter(rng.normal(size=shape), 3.0, mode="wrap")
        field /= field.std() + 1e-12
        img -= 70.0 * np.exp(-(field / 0.25) ** 2)
    grid = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), -1)
    for _ in range(filaments):
        p = rng.uniform(0, 1, 3) * np.array(shape)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        rel = grid - p
        along = rel @ d
        dist2 = (rel * rel).sum(-1) - along**2
        img -= 50.0 * np.exp(-dist2 / 1.5)
    img += rng.normal(scale=2.0, size=shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synth_dataset(directory, count=8, shape=(16, 16, 16), seed=0) -> list[str]:
    """Write ``count`` cubes as ``cube_NNN.v3d``; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    seeds = np.random.SeedSequence(seed).spawn(count)
    paths = []
    for n, ss in enumerate(seeds):
        path = os.path.join(directory, f"cube_{n:03d}.v3d")
        save_v3d(synth_cube(shape, seed=int(ss.generate_state(1)[0])), path)
        paths.append(path)
    return paths
