"""Deterministic synthetic scenes for tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .model_io import GaussianCloud


def smooth_scene(n: int, seed: int = 0, noise: float = 0.002) -> GaussianCloud:
    """Gaussians on a few smooth surfaces with attributes that vary slowly in space.

    Points lie on a wavy sheet, a sphere and a cylinder inside [-1, 1]^3.
    Every attribute is a low-frequency function of position plus white noise
    of standard deviation ``noise``.  Opacity crosses the MEM threshold of the
    test weights, so both colour paths are exercised.
    """
    rng = np.random.default_rng(seed)
    which = rng.integers(0, 3, size=n)
    u = rng.random(n)
    v = rng.random(n)
    pos = np.empty((n, 3))
    sheet = which == 0
    pos[sheet, 0] = 2 * u[sheet] - 1
    pos[sheet, 1] = 2 * v[sheet] - 1
    pos[sheet, 2] = 0.25 * np.sin(2.5 * pos[sheet, 0]) * np.cos(1.5 * pos[sheet, 1]) - 0.3
    sph = which == 1
    th = np.arccos(2 * u[sph] - 1)
    ph = 2 * np.pi * v[sph]
    pos[sph] = 0.45 * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], 1) + [0.3, 0.2, 0.35]
    cyl = which == 2
    ang = 2 * np.pi * u[cyl]
    pos[cyl] = np.stack([0.3 * np.cos(ang) - 0.5, 0.3 * np.sin(ang) + 0.4, 1.6 * v[cyl] - 0.8], 1)
    pos += rng.normal(scale=1e-3, size=pos.shape)

    x, y, z = pos.T
    geo = np.empty((n, 8))
    geo[:, 0] = 1.2 * np.sin(1.7 * x + 0.4) * np.cos(1.3 * y) + 0.8 * z - 0.6
    geo[:, 1] = -4.5 + 0.5 * np.sin(1.1 * x + 0.9 * z)
    geo[:, 2] = -4.6 + 0.4 * np.cos(1.3 * y - 0.5 * x)
    geo[:, 3] = -5.0 + 0.3 * np.sin(0.8 * z + 1.2 * y)
    quat = np.stack([1.0 + 0 * x, 0.3 * np.sin(x + y), 0.2 * np.cos(1.2 * z), 0.25 * np.sin(0.9 * y - z)], 1)
    geo[:, 4:] = quat / np.linalg.norm(quat, axis=1, keepdims=True)

    col = np.empty((n, 48))
    for comp in range(3):
        col[:, 16 * comp] = 0.6 * np.sin(1.4 * x + 0.7 * comp) + 0.4 * np.cos(1.1 * y - 0.5 * z + comp)
        for j in range(1, 16):
            a = 0.5 + 0.07 * j + 0.3 * comp
            col[:, 16 * comp + j] = 0.012 * np.sin(a * x + 0.8 * y - 0.6 * z + 0.5 * j)
    geo += rng.normal(scale=noise, size=geo.shape)
    col += rng.normal(scale=noise, size=col.shape) * np.where(np.arange(48) % 16 == 0, 1.0, 0.25)
    return GaussianCloud(pos, geo, col)


def noise_scene(n: int, seed: int = 0) -> GaussianCloud:
    """White-noise positions and attributes (no spatial correlation)."""
    rng = np.random.default_rng(seed)
    return GaussianCloud(
        rng.uniform(-1, 1, size=(n, 3)),
        rng.normal(size=(n, 8)),
        rng.normal(scale=0.3, size=(n, 48)),
    )
