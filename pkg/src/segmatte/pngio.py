"""8-bit PNG conventions: grayscale maps store round(255*v), images are RGB."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_gray(path, values: np.ndarray) -> None:
    """Write a [H,W] map with values in [0,1] as 8-bit grayscale."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected [H,W], got {arr.shape}")
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def load_gray(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG as a [H,W] float map in [0,1]."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def save_rgb(path, values: np.ndarray) -> None:
    """Write a [3,H,W] image with values in [0,1] as 8-bit RGB."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected [3,H,W], got {arr.shape}")
    rgb = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def load_rgb(path) -> np.ndarray:
    """Read an RGB PNG as a [3,H,W] float image in [0,1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def list_pngs(directory) -> list[str]:
    return sorted(p.name for p in Path(directory).glob("*.png"))
