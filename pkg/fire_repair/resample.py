"""Bilinear resampling of (C, H, W) images, shared by the warp trigger and ShrinkPad."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import map_coordinates


def bilinear_sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample every channel at fractional (row, col) coordinates.

    Coordinates outside the image take the nearest edge value, which equals
    clamping the coordinate before interpolating.
    """
    coords = np.stack([rows, cols])
    out = np.stack([map_coordinates(channel, coords, order=1, mode="nearest") for channel in image])
    return out.astype(np.float32, copy=False)


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize with pixel-centre alignment (output pixel i samples source (i + 0.5) * scale - 0.5)."""
    _, h, w = image.shape
    rows = (np.arange(height) + 0.5) * (h / height) - 0.5
    cols = (np.arange(width) + 0.5) * (w / width) - 0.5
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    return bilinear_sample(image, grid_r, grid_c)
