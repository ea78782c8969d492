#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""PNG and CSV emission for amplitude sweeps, phase rasters and metric tables."""
import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from PIL import Image

from holo_errors import DimensionError

PathLike = Union[str, Path]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def to_uint8(img: np.ndarray, vmax: Optional[float] = None) -> np.ndarray:
    vmax = float(np.max(img)) if vmax is None else float(vmax)
    if vmax <= 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.round(np.clip(img / vmax, 0.0, 1.0) * 255).astype(np.uint8)


def save_amplitude_png(path: PathLike, img: np.ndarray, vmax: Optional[float] = None):
    """8-bit grayscale (H, W) or RGB (3, H, W) amplitude image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = np.moveaxis(img, 0, 2)
    Image.fromarray(to_uint8(img, vmax)).save(_prepare(path))


def save_montage(path: PathLike, stack: np.ndarray, cols: int = 8, vmax: Optional[float] = None):
    """Tile a (planes, H, W) or (planes, 3, H, W) stack with one joint normalization."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 4:
        stack = np.moveaxis(stack, 1, 3)
    elif stack.ndim != 3:
        raise DimensionError(f"montage expects (P, H, W) or (P, 3, H, W), got {stack.shape}")
    vmax = float(np.max(stack)) if vmax is None else vmax
    n = stack.shape[0]
    cols = max(1, min(cols, n))
    rows = -(-n // cols)
    h, w = stack.shape[1:3]
    canvas = np.zeros((rows * h, cols * w) + stack.shape[3:])
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = stack[i]
    Image.fromarray(to_uint8(canvas, vmax)).save(_prepare(path))


def save_uint16_png(path: PathLike, raster: np.ndarray):
    raster = np.asarray(raster)
    if raster.dtype != np.uint16 or raster.ndim != 2:
        raise DimensionError(f"expected 2-D uint16 raster, got {raster.dtype} {raster.shape}")
    Image.fromarray(raster).save(_prepare(path))


def load_uint16_png(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im, dtype=np.uint16)


def load_gray(path: PathLike, size: Optional[Sequence[int]] = None) -> np.ndarray:
    """Luminance in [0, 1], optionally resized to (H, W)."""
    with Image.open(path) as im:
        im = im.convert('L')
        if size is not None:
            im = im.resize((int(size[1]), int(size[0])), Image.BICUBIC)
        return np.asarray(im, dtype=np.float64) / 255.0


def write_csv(path: PathLike, rows: List[Dict[str, object]], fieldnames: Optional[List[str]] = None):
    path = _prepare(path)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    return value
