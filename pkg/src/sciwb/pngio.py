"""Bit-exact PNG export of cube channels.

Values are clamped to [0, 1] and linearly quantized to 8 bits with
round-half-up (0.5 maps to 128), so exports are reproducible to the
byte across runs and platforms.
"""

from __future__ import annotations

import io
import math
import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .dataio import atomic_write_bytes
from .exceptions import DimensionError


def quantize_unit(arr: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map linearly onto {0, ..., 255}, half rounded up."""
    clipped = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def write_gray_png(path: str | Path, plane: np.ndarray) -> Path:
    """Write one 2-D plane as an 8-bit grayscale PNG."""
    if plane.ndim != 2:
        raise DimensionError(f"expected a 2-D plane, got shape {plane.shape}")
    img = Image.fromarray(quantize_unit(plane), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())


def contact_sheet(cube: np.ndarray, cols: int | None = None,
                  pad: int = 2) -> np.ndarray:
    """Tile the channels of an (H, W, C) cube into one uint8 grid."""
    if cube.ndim != 3:
        raise DimensionError(f"expected an (H, W, C) cube, got shape {cube.shape}")
    h, w, c = cube.shape
    if cols is None:
        cols = math.ceil(math.sqrt(c))
    rows = math.ceil(c / cols)
    sheet = np.full((rows * h + pad * (rows + 1), cols * w + pad * (cols + 1)),
                    32, dtype=np.uint8)
    for idx in range(c):
        r, col = divmod(idx, cols)
        top = pad + r * (h + pad)
        left = pad + col * (w + pad)
        sheet[top:top + h, left:left + w] = quantize_unit(cube[:, :, idx])
    return sheet


def export_cube_pngs(cube: np.ndarray, outdir: str | Path,
                     prefix: str = "channel") -> list[Path]:
    """One PNG per channel plus a contact sheet; returns written paths."""
    outdir = Path(outdir)
    lo, hi = float(np.min(cube)), float(np.max(cube))
    if lo < 0.0 or hi > 1.0:
        warnings.warn(f"cube values in [{lo:.4g}, {hi:.4g}] fall outside "
                      "[0, 1]; clamping for export", RuntimeWarning)
    paths = []
    for c in range(cube.shape[2]):
        paths.append(write_gray_png(outdir / f"{prefix}_{c:02d}.png", cube[:, :, c]))
    sheet = contact_sheet(cube)
    img = Image.fromarray(sheet, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    paths.append(atomic_write_bytes(outdir / f"{prefix}_sheet.png", buf.getvalue()))
    return paths
