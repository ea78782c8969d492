#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Phase-only encoding: axial shift, off-axis carrier and double-phase decomposition."""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Tuple

import numpy as np

from field import ComplexField, HologramRGB
from holo_errors import DomainError
from propagation import DEFAULT_CONFIG, PropagationConfig, propagate

logger = logging.getLogger(__name__)

CEILING_MODES = ('max', 'percentile')


@dataclass(frozen=True)
class EncodeConfig:
    """dz in meters; carrier coefficients in frequency bins across the aperture."""
    dz: float = 9.0e-3
    cx: float = 1.1
    cy: float = 0.5
    ceiling: str = 'max'
    percentile: float = 99.5

    def __post_init__(self):
        if not all(np.isfinite([self.dz, self.cx, self.cy])):
            raise DomainError(f"encode parameters must be finite: {self}")
        if self.ceiling not in CEILING_MODES:
            raise DomainError(f"ceiling must be one of {CEILING_MODES}, got {self.ceiling!r}")
        if not 0 < self.percentile <= 100:
            raise DomainError(f"percentile must lie in (0, 100], got {self.percentile}")


def _normalized_amplitude(data: np.ndarray, cfg: EncodeConfig) -> np.ndarray:
    amp = np.abs(data)
    ceiling = float(amp.max()) if cfg.ceiling == 'max' else float(np.percentile(amp, cfg.percentile))
    if ceiling <= 0:
        raise DomainError("cannot normalize an all-zero field")
    return np.clip(amp / ceiling, 0.0, 1.0)


def double_phase(fld: ComplexField, cfg: EncodeConfig = EncodeConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """phi +/- arccos(a) with a the amplitude normalized to [0, 1]."""
    a = _normalized_amplitude(fld.data, cfg)
    phi = np.angle(fld.data)
    offset = np.arccos(a)
    return phi + offset, phi - offset


def checkerboard(shape: Tuple[int, int]) -> np.ndarray:
    yy, xx = np.indices(shape)
    return (yy + xx) % 2 == 0


def dpm_encode(fld: ComplexField, cfg: EncodeConfig = EncodeConfig()) -> ComplexField:
    """Unit-amplitude field carrying phi_1 and phi_2 on alternating checkerboard cells."""
    phi1, phi2 = double_phase(fld, cfg)
    phase = np.where(checkerboard(fld.shape), phi1, phi2)
    return fld.with_data(np.exp(1j * phase))


def axial_shift(holo: HologramRGB, dz: float, config: PropagationConfig = DEFAULT_CONFIG) -> HologramRGB:
    """Move the hologram plane dz into the scene (propagate every channel by -dz)."""
    if dz == 0:
        return holo
    return holo.map(lambda ch: propagate(ch, -dz, config))


def apply_carrier(fld: ComplexField, cx: float, cy: float) -> ComplexField:
    """Multiply by exp(i 2 pi (cx x / W + cy y / H)) over pixel indices."""
    if cx == 0 and cy == 0:
        return fld
    h, w = fld.shape
    yy, xx = np.indices((h, w))
    return fld.with_data(fld.data * np.exp(2j * np.pi * (cx * xx / w + cy * yy / h)))


def phase_to_uint16(phase: np.ndarray) -> np.ndarray:
    """Wrap to [-pi, pi] and map linearly onto [0, 65535]."""
    wrapped = np.angle(np.exp(1j * np.asarray(phase)))
    return np.round((wrapped + np.pi) / (2 * np.pi) * 65535).astype(np.uint16)


def encode_hologram(holo: HologramRGB, cfg: EncodeConfig = EncodeConfig(),
                    config: PropagationConfig = DEFAULT_CONFIG) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Shift, carrier, then DPM per channel; returns (3, H, W) phases and metadata."""
    shifted = axial_shift(holo, cfg.dz, config)
    phases = []
    for ch in shifted:
        encoded = dpm_encode(apply_carrier(ch, cfg.cx, cfg.cy), cfg)
        phases.append(np.angle(encoded.data))
    meta = {
        **asdict(cfg),
        'carrier_units': 'bins across aperture',
        'shape': list(holo.shape),
        'pitch_m': holo.pitch,
        'wavelengths_m': list(holo.wavelengths),
        'phase_mapping': '[-pi, pi] -> [0, 65535]',
    }
    logger.info(f"encoded {holo.shape} hologram: dz {cfg.dz} m, carrier ({cfg.cx}, {cfg.cy}) bins")
    return np.stack(phases), meta
