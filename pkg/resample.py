#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Bicubic baseline, depth calibration and boundary apodization."""
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import windows

from field import ComplexField, HologramRGB
from holo_errors import DomainError

logger = logging.getLogger(__name__)

CATMULL_ROM_A = -0.5
CALIBRATION_MODES = ('none', 'calibrated')
APODIZATION_MODES = ('none', 'white', 'tukey')


@dataclass(frozen=True)
class CalibrationRule:
    """How evaluation distances are remapped for an s-fold upsampled hologram."""
    scale: float
    mode: str = 'none'

    def __post_init__(self):
        if self.scale < 1:
            raise DomainError(f"scale must be >= 1, got {self.scale}")
        if self.mode not in CALIBRATION_MODES:
            raise DomainError(f"calibration mode must be one of {CALIBRATION_MODES}, got {self.mode!r}")

    @property
    def calibrated(self) -> bool:
        return self.mode == 'calibrated'


def _cubic_weight(d: np.ndarray, a: float = CATMULL_ROM_A) -> np.ndarray:
    d = np.abs(d)
    near = ((a + 2) * d - (a + 3)) * d * d + 1
    far = ((a * d - 5 * a) * d + 8 * a) * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


@lru_cache(maxsize=32)
def catmull_rom_matrix(n_in: int, s: int) -> np.ndarray:
    """(s*n_in, n_in) operator of 1-D Catmull-Rom interpolation, clamped edges."""
    n_out = n_in * s
    x = (np.arange(n_out) + 0.5) / s - 0.5
    base = np.floor(x).astype(np.int64)
    frac = x - base
    matrix = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for offset in (-1, 0, 1, 2):
        cols = np.clip(base + offset, 0, n_in - 1)
        np.add.at(matrix, (rows, cols), _cubic_weight(frac - offset))
    matrix.flags.writeable = False
    return matrix


def bicubic_upsample_field(field: ComplexField, s: int) -> ComplexField:
    """Interpolate real and imaginary parts separately; pitch is left unchanged."""
    if s < 1 or int(s) != s:
        raise DomainError(f"scale must be a positive integer, got {s}")
    s = int(s)
    if s == 1:
        return field
    my = catmull_rom_matrix(field.height, s)
    mx = catmull_rom_matrix(field.width, s)
    real = my @ field.data.real @ mx.T
    imag = my @ field.data.imag @ mx.T
    return field.with_data(real + 1j * imag)


def bicubic_upsample(holo: HologramRGB, s: int) -> HologramRGB:
    """Catmull-Rom upsampling of every channel at fixed pixel pitch.

    Keeping the pitch while multiplying the pixel count is what stretches the
    focal distances quadratically.
    """
    logger.debug(f"bicubic upsampling {holo.shape} by {s}")
    return holo.map(lambda ch: bicubic_upsample_field(ch, s))


def calibrated_distance(z_hr_target: float, s: float, rule: CalibrationRule = None) -> float:
    """Distance at which a bicubic hologram must be evaluated to match an HR plane."""
    if s < 1:
        raise DomainError(f"scale must be >= 1, got {s}")
    rule = rule or CalibrationRule(s, 'none')
    if rule.calibrated:
        return s * z_hr_target
    return z_hr_target


def white_hologram(field: ComplexField) -> ComplexField:
    """Unit amplitude, phase kept; zero samples become 1 + 0i."""
    data = field.data
    amp = np.abs(data)
    phase = np.angle(data)
    white = np.where(amp > 0, np.cos(phase) + 1j * np.sin(phase), 1.0 + 0j)
    return field.with_data(white)


def tukey_window(shape, alpha: float) -> np.ndarray:
    if not 0 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    wy = windows.tukey(shape[0], alpha, sym=True)
    wx = windows.tukey(shape[1], alpha, sym=True)
    return np.outer(wy, wx)


def tukey_apodize(field: ComplexField, alpha: float) -> ComplexField:
    """Multiply by a separable 2-D Tukey taper; alpha=0 leaves the field untouched."""
    if alpha == 0:
        return field
    return field.with_data(field.data * tukey_window(field.shape, alpha))


def apodize(field: ComplexField, mode: str = 'none', alpha: float = 0.25) -> ComplexField:
    if mode == 'none':
        return field
    if mode == 'white':
        return white_hologram(field)
    if mode == 'tukey':
        return tukey_apodize(field, alpha)
    raise DomainError(f"apodization mode must be one of {APODIZATION_MODES}, got {mode!r}")
