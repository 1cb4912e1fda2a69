"""Synthetic test scenes.

Every generator returns an (H, W, C) float64 cube with values in
[0, 1], fully determined by the generator passed in. Channels carry
coherent structure that moves or changes smoothly across the channel
axis, so reconstructions have something to get wrong.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DataError


def moving_disks(rng: np.random.Generator, height: int, width: int,
                 channels: int, num_disks: int = 3) -> np.ndarray:
    """Soft-edged disks translating linearly across the channel axis."""
    if num_disks < 1:
        raise ContractError(f"num_disks must be >= 1, got {num_disks}")
    cube = np.zeros((height, width, channels), dtype=np.float64)
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(num_disks):
        r = rng.uniform(0.12, 0.22) * min(height, width)
        cy0 = rng.uniform(r, height - r)
        cx0 = rng.uniform(r, width - r)
        span = max(channels - 1, 1)
        vy = rng.uniform(-0.3, 0.3) * height / span
        vx = rng.uniform(-0.3, 0.3) * width / span
        level = rng.uniform(0.5, 1.0)
        for c in range(channels):
            dist = np.sqrt((yy - (cy0 + vy * c)) ** 2 + (xx - (cx0 + vx * c)) ** 2)
            disk = np.clip(r - dist, 0.0, 1.0) * level  # 1-pixel soft edge
            cube[:, :, c] = np.maximum(cube[:, :, c], disk)
    return np.clip(cube, 0.0, 1.0)


def gradient_ramps(rng: np.random.Generator, height: int, width: int,
                   channels: int) -> np.ndarray:
    """Oriented linear ramps whose phase advances with the channel index."""
    cube = np.empty((height, width, channels), dtype=np.float64)
    theta = rng.uniform(0, 2 * np.pi)
    phase_step = rng.uniform(0.2, 0.8)
    yy, xx = np.mgrid[0:height, 0:width]
    proj = (np.cos(theta) * xx / max(width - 1, 1)
            + np.sin(theta) * yy / max(height - 1, 1))
    proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-12)
    for c in range(channels):
        cube[:, :, c] = (proj + c * phase_step) % 1.0
    return cube


def checker_drift(rng: np.random.Generator, height: int, width: int,
                  channels: int, tile: int | None = None) -> np.ndarray:
    """A checkerboard drifting one pixel per channel along both axes."""
    if tile is None:
        tile = max(2, min(height, width) // 8)
    if tile < 1:
        raise ContractError(f"tile must be >= 1, got {tile}")
    lo, hi = rng.uniform(0.05, 0.25), rng.uniform(0.7, 0.95)
    cube = np.empty((height, width, channels), dtype=np.float64)
    yy, xx = np.mgrid[0:height, 0:width]
    for c in range(channels):
        pattern = (((yy + c) // tile) + ((xx + c) // tile)) % 2
        cube[:, :, c] = np.where(pattern == 1, hi, lo)
    return cube


SCENE_KINDS = ("moving-disks", "gradient-ramps", "checker-drift", "file")


def make_scene(kind: str, rng: np.random.Generator, height: int, width: int,
               channels: int, *, num_disks: int = 3, tile: int | None = None,
               path: str | None = None) -> np.ndarray:
    """Dispatch on scene kind; "file" loads an (H, W, C) cube NPY."""
    if kind == "moving-disks":
        return moving_disks(rng, height, width, channels, num_disks)
    if kind == "gradient-ramps":
        return gradient_ramps(rng, height, width, channels)
    if kind == "checker-drift":
        return checker_drift(rng, height, width, channels, tile)
    if kind == "file":
        from .dataio import load_array
        if not path:
            raise DataError("scene kind 'file' requires a path")
        cube = load_array(path).astype(np.float64)
        if cube.ndim != 3:
            raise DataError(f"scene file {path} must hold an (H, W, C) cube, "
                            f"got shape {cube.shape}")
        if cube.shape != (height, width, channels):
            raise DataError(
                f"scene file {path} has shape {cube.shape}, configuration "
                f"expects {(height, width, channels)}")
        if not np.isfinite(cube).all():
            raise DataError(f"scene file {path} contains non-finite values")
        return cube
    raise ContractError(f"unknown scene kind {kind!r}; choose from {SCENE_KINDS}")
