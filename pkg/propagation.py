#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Band-limited angular spectrum propagation of complex fields."""
import logging
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from field import ComplexField, HologramRGB, WAVELENGTHS_RGB
from holo_errors import DomainError

logger = logging.getLogger(__name__)

# cache keys quantize z to this step (meters)
Z_QUANTUM = 1e-12


@dataclass(frozen=True)
class PropagationConfig:
    """ASM settings: padding ratio, band limiting and transfer caching."""
    pad_factor: float = 2.0
    band_limited: bool = True
    cache_transfers: bool = True

    def __post_init__(self):
        if self.pad_factor < 1:
            raise DomainError(f"pad_factor must be >= 1, got {self.pad_factor}")

    def padded_shape(self, shape: Tuple[int, int]) -> Tuple[int, int]:
        return (int(round(shape[0] * self.pad_factor)), int(round(shape[1] * self.pad_factor)))


DEFAULT_CONFIG = PropagationConfig()


@dataclass(frozen=True)
class TransferGrid:
    """Transfer function sampled on the FFT frequency grid (unshifted order)."""
    values: np.ndarray
    z: float
    wavelength: float
    shape: Tuple[int, int]
    pitch: float


class TransferCache:
    """Thread-safe LRU cache of transfer grids."""

    def __init__(self, max_entries: int = 256):
        self.max_entries = max_entries
        self._entries: 'OrderedDict[tuple, TransferGrid]' = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: tuple) -> Optional[TransferGrid]:
        with self._lock:
            grid = self._entries.get(key)
            if grid is not None:
                self.hits += 1
                self._entries.move_to_end(key)
            return grid

    def put(self, key: tuple, grid: TransferGrid):
        with self._lock:
            self.misses += 1
            self._entries[key] = grid
            while len(self._entries) > self.max_entries:
                self._entries.popitem(last=False)

    def clear(self):
        with self._lock:
            self._entries.clear()
            self.hits = 0
            self.misses = 0

    def stats(self) -> Dict[str, int]:
        return {"entries": len(self._entries), "hits": self.hits, "misses": self.misses}


transfer_cache = TransferCache()


def _frequencies(shape: Tuple[int, int], pitch: float) -> Tuple[np.ndarray, np.ndarray]:
    fy = sfft.fftfreq(shape[0], d=pitch)[:, None]
    fx = sfft.fftfreq(shape[1], d=pitch)[None, :]
    return fx, fy


def band_mask(shape: Tuple[int, int], pitch: float, wavelength: float, z: float,
              config: PropagationConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Support of the transfer function: propagating waves inside the band limit.

    ``shape`` is the grid the FFT runs on (already padded).
    """
    fx, fy = _frequencies(shape, pitch)
    arg = wavelength ** -2 - fx ** 2 - fy ** 2
    mask = arg >= 0
    if config.band_limited:
        du = 1.0 / (shape[1] * pitch)
        dv = 1.0 / (shape[0] * pitch)
        fx_limit = 1.0 / (wavelength * math.sqrt((2 * du * abs(z)) ** 2 + 1))
        fy_limit = 1.0 / (wavelength * math.sqrt((2 * dv * abs(z)) ** 2 + 1))
        mask &= (np.abs(fx) <= fx_limit) & (np.abs(fy) <= fy_limit)
    return mask


def _build_transfer(shape, pitch, wavelength, z, config) -> TransferGrid:
    fx, fy = _frequencies(shape, pitch)
    arg = wavelength ** -2 - fx ** 2 - fy ** 2
    mask = band_mask(shape, pitch, wavelength, z, config)
    phase = 2 * np.pi * z * np.sqrt(np.where(mask, arg, 0.0))
    values = np.where(mask, np.exp(1j * phase), 0.0)
    values.flags.writeable = False
    return TransferGrid(values, z, wavelength, tuple(shape), pitch)


def transfer(shape: Tuple[int, int], pitch: float, wavelength: float, z: float,
             config: PropagationConfig = DEFAULT_CONFIG) -> TransferGrid:
    """Angular-spectrum transfer exp(i 2 pi z sqrt(1/lambda^2 - fx^2 - fy^2)).

    Evanescent and band-limited components are zero, so transfer(-z) is the
    exact conjugate of transfer(z).
    """
    if not wavelength > 0:
        raise DomainError(f"wavelength must be positive, got {wavelength}")
    if not pitch > 0:
        raise DomainError(f"pitch must be positive, got {pitch}")
    quantum = int(round(z / Z_QUANTUM))
    z_q = quantum * Z_QUANTUM
    shape = (int(shape[0]), int(shape[1]))
    if not config.cache_transfers:
        return _build_transfer(shape, pitch, wavelength, z_q, config)
    key = (shape, pitch, wavelength, quantum, config.band_limited)
    grid = transfer_cache.get(key)
    if grid is None:
        grid = _build_transfer(shape, pitch, wavelength, z_q, config)
        transfer_cache.put(key, grid)
    return grid


def propagate_array(data: np.ndarray, pitch: float, wavelength: float, z: float,
                    config: PropagationConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Propagate a bare complex 2D array; see :func:`propagate`."""
    h, w = data.shape
    ph, pw = config.padded_shape((h, w))
    top, left = (ph - h) // 2, (pw - w) // 2
    padded = np.zeros((ph, pw), dtype=np.complex128)
    padded[top:top + h, left:left + w] = data
    grid = transfer((ph, pw), pitch, wavelength, z, config)
    spectrum = sfft.fft2(padded, norm='ortho')
    out = sfft.ifft2(spectrum * grid.values, norm='ortho')
    return out[top:top + h, left:left + w]


def propagate(field: ComplexField, z: float,
              config: PropagationConfig = DEFAULT_CONFIG) -> ComplexField:
    """Zero-pad, transform, apply the transfer function, invert and crop back.

    The operator is linear and its adjoint is propagation by -z. Energy and
    round trips are exact only for inputs whose spectrum lies inside the band
    and whose propagated field stays inside the window (e.g. pad_factor=1).
    """
    return field.with_data(propagate_array(field.data, field.pitch, field.wavelength, z, config))


def _run_ordered(fn, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def reconstruct_stack(holo: HologramRGB, z_list: Sequence[float],
                      config: PropagationConfig = DEFAULT_CONFIG,
                      workers: int = 1) -> np.ndarray:
    """Amplitude stack of shape (planes, 3, H, W), in the order of ``z_list``."""
    z_list = [float(z) for z in z_list]
    if not z_list:
        raise DomainError("z_list must not be empty")

    def plane(z: float) -> np.ndarray:
        return np.stack([np.abs(propagate(ch, z, config).data) for ch in holo.channels])

    return np.stack(_run_ordered(plane, z_list, workers))


def propagate_stack(holo: HologramRGB, z_list: Sequence[float],
                    config: PropagationConfig = DEFAULT_CONFIG, workers: int = 1) -> List[HologramRGB]:
    """Propagated copies of ``holo``, in the order of ``z_list``."""
    z_list = [float(z) for z in z_list]
    if not z_list:
        raise DomainError("z_list must not be empty")
    return _run_ordered(lambda z: holo.map(lambda ch: propagate(ch, z, config)), z_list, workers)


def plane_grid(z_max: float, n_planes: int) -> np.ndarray:
    """Uniform signed reconstruction distances from 0 to -z_max."""
    return np.linspace(0.0, -abs(z_max), int(n_planes))


def max_distance(M: int, pitch: float, wavelength: float) -> float:
    """Largest z whose sampled transfer phase stays alias-free on an M-pixel aperture."""
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    if 2 * pitch < wavelength:
        raise DomainError(
            f"pitch {pitch} below half the wavelength {wavelength}: only evanescent waves")
    ratio = 4 * pitch ** 2 / wavelength ** 2 - 1
    return M * pitch * math.sqrt(max(ratio, 0.0)) / 2


def scene_depth(M: int, pitch: float) -> float:
    """Practical depth range for a 1:1:2 volume: twice the lateral aperture."""
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    return 2 * M * pitch


def max_distance_table(resolutions: Sequence[int] = (256, 512, 1024, 2048, 4096),
                       pitch: float = 3.6e-6,
                       wavelengths: Sequence[float] = WAVELENGTHS_RGB) -> List[Dict[str, float]]:
    """Theoretical maximum distance per wavelength alongside the 1:1:2 depth."""
    rows = []
    for M in resolutions:
        row = {"resolution": int(M), "scene_depth_m": scene_depth(M, pitch)}
        for wl in wavelengths:
            row[f"max_distance_{wl * 1e9:.0f}nm_m"] = max_distance(M, pitch, wl)
        rows.append(row)
    return rows
