#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Complex-field and tensor containers shared by every module.

The hologram plane sits at z = 0 and scene content occupies positive depths;
APIs that propagate take signed distances, so reconstructing a point at depth
z0 means propagating by -z0.
"""
from dataclasses import dataclass, field as dc_field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from holo_errors import DimensionError, DomainError, RangeError

# R, G, B laser lines in meters
WAVELENGTHS_RGB: Tuple[float, float, float] = (638e-9, 532e-9, 450e-9)
DEFAULT_PITCH = 3.6e-6


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class ComplexField:
    """2D grid of complex samples with pixel pitch and wavelength."""
    data: np.ndarray
    pitch: float
    wavelength: float

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128, copy=True)
        if data.ndim != 2:
            raise DimensionError(f"ComplexField expects a 2D grid, got shape {data.shape}")
        if not self.pitch > 0:
            raise DomainError(f"pitch must be positive, got {self.pitch}")
        if not self.wavelength > 0:
            raise DomainError(f"wavelength must be positive, got {self.wavelength}")
        if not np.all(np.isfinite(data)):
            raise DomainError("ComplexField samples must be finite")
        object.__setattr__(self, 'data', _readonly(data))
        object.__setattr__(self, 'pitch', float(self.pitch))
        object.__setattr__(self, 'wavelength', float(self.wavelength))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def amplitude(self) -> np.ndarray:
        return np.abs(self.data)

    def phase(self) -> np.ndarray:
        return np.angle(self.data)

    def intensity(self) -> np.ndarray:
        return np.abs(self.data) ** 2

    def energy(self) -> float:
        """Squared L2 norm of the samples."""
        return float(np.vdot(self.data, self.data).real)

    def with_data(self, data: np.ndarray) -> 'ComplexField':
        """Same metadata, new samples."""
        return ComplexField(data, self.pitch, self.wavelength)


def from_amp_phase(amplitude: np.ndarray, phase: np.ndarray, pitch: float,
                   wavelength: float) -> ComplexField:
    """Build a field from amplitude and phase via Euler's rule."""
    amplitude = np.asarray(amplitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if amplitude.shape != phase.shape:
        raise DimensionError(
            f"amplitude {amplitude.shape} and phase {phase.shape} grids differ")
    if np.any(amplitude < 0):
        raise DomainError("amplitude must be non-negative")
    return ComplexField(amplitude * (np.cos(phase) + 1j * np.sin(phase)), pitch, wavelength)


def crop(field: ComplexField, x0: int, y0: int, w: int, h: int) -> ComplexField:
    """Copy the (h, w) window whose top-left sample is (y0, x0)."""
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > field.width or y0 + h > field.height:
        raise RangeError(
            f"crop window x0={x0} y0={y0} w={w} h={h} outside field "
            f"{field.height}x{field.width}")
    return field.with_data(field.data[y0:y0 + h, x0:x0 + w])


@dataclass(frozen=True)
class HologramRGB:
    """Three ComplexFields (R, G, B) sharing geometry."""
    channels: Tuple[ComplexField, ComplexField, ComplexField]

    def __post_init__(self):
        channels = tuple(self.channels)
        if len(channels) != 3:
            raise DimensionError(f"HologramRGB needs exactly 3 channels, got {len(channels)}")
        first = channels[0]
        for ch in channels[1:]:
            if ch.shape != first.shape:
                raise DimensionError(f"channel shapes differ: {first.shape} vs {ch.shape}")
            if ch.pitch != first.pitch:
                raise DimensionError(f"channel pitches differ: {first.pitch} vs {ch.pitch}")
        wl = [ch.wavelength for ch in channels]
        if not (wl[0] > wl[1] > wl[2]):
            raise DomainError(f"wavelengths must strictly decrease R->G->B, got {wl}")
        object.__setattr__(self, 'channels', channels)

    @classmethod
    def from_array(cls, data: np.ndarray, pitch: float = DEFAULT_PITCH,
                   wavelengths: Sequence[float] = WAVELENGTHS_RGB) -> 'HologramRGB':
        """Wrap a (3, H, W) complex array."""
        data = np.asarray(data)
        if data.ndim != 3 or data.shape[0] != 3:
            raise DimensionError(f"expected (3, H, W) array, got {data.shape}")
        return cls(tuple(ComplexField(data[c], pitch, wavelengths[c]) for c in range(3)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.channels[0].shape

    @property
    def pitch(self) -> float:
        return self.channels[0].pitch

    @property
    def wavelengths(self) -> Tuple[float, float, float]:
        return tuple(ch.wavelength for ch in self.channels)

    def as_array(self) -> np.ndarray:
        return np.stack([ch.data for ch in self.channels])

    def amplitude(self) -> np.ndarray:
        return np.abs(self.as_array())

    def map(self, fn: Callable[[ComplexField], ComplexField]) -> 'HologramRGB':
        return HologramRGB(tuple(fn(ch) for ch in self.channels))

    def __iter__(self) -> Iterator[ComplexField]:
        return iter(self.channels)


@dataclass
class ComplexTensor:
    """Rank-4 (batch, channel, height, width) complex array in planar layout.

    ``grad`` holds dL/dRe + i dL/dIm as a second ComplexTensor once a backward
    sweep has reached this tensor.
    """
    real: np.ndarray
    imag: np.ndarray
    grad: Optional['ComplexTensor'] = dc_field(default=None, repr=False)

    def __post_init__(self):
        self.real = np.asarray(self.real)
        self.imag = np.asarray(self.imag)
        if self.real.ndim != 4:
            raise DimensionError(f"ComplexTensor expects rank 4, got shape {self.real.shape}")
        if self.real.shape != self.imag.shape:
            raise DimensionError(
                f"real {self.real.shape} and imaginary {self.imag.shape} buffers differ")
        if self.grad is not None and self.grad.shape != self.shape:
            raise DimensionError(f"gradient shape {self.grad.shape} != {self.shape}")

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.real.shape

    @property
    def dtype(self):
        return self.real.dtype

    @classmethod
    def from_complex(cls, data: np.ndarray, dtype=np.float64) -> 'ComplexTensor':
        data = np.asarray(data)
        return cls(np.ascontiguousarray(data.real, dtype=dtype),
                   np.ascontiguousarray(data.imag, dtype=dtype))

    @classmethod
    def zeros(cls, shape: Tuple[int, int, int, int], dtype=np.float64) -> 'ComplexTensor':
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))

    @classmethod
    def from_hologram(cls, holo: HologramRGB, dtype=np.float64) -> 'ComplexTensor':
        """(1, 3, H, W) tensor from one hologram."""
        return cls.from_complex(holo.as_array()[None], dtype=dtype)

    @classmethod
    def stack(cls, tensors: Sequence['ComplexTensor']) -> 'ComplexTensor':
        return cls(np.concatenate([t.real for t in tensors], axis=0),
                   np.concatenate([t.imag for t in tensors], axis=0))

    def split(self) -> List['ComplexTensor']:
        return [ComplexTensor(self.real[n:n + 1], self.imag[n:n + 1]) for n in range(self.shape[0])]

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    def to_hologram(self, index: int = 0, pitch: float = DEFAULT_PITCH,
                    wavelengths: Sequence[float] = WAVELENGTHS_RGB) -> HologramRGB:
        if self.shape[1] != 3:
            raise DimensionError(f"hologram tensors carry 3 channels, got {self.shape[1]}")
        return HologramRGB.from_array(self.to_complex()[index], pitch, wavelengths)

    def zeros_like(self) -> 'ComplexTensor':
        return ComplexTensor(np.zeros_like(self.real), np.zeros_like(self.imag))

    def cast(self, dtype) -> 'ComplexTensor':
        return ComplexTensor(self.real.astype(dtype), self.imag.astype(dtype))

    def accumulate_grad(self, grad_real: np.ndarray, grad_imag: np.ndarray):
        """Add into the gradient buffer (single owner at a time)."""
        if self.grad is None:
            self.grad = ComplexTensor(np.array(grad_real, dtype=self.dtype, copy=True),
                                      np.array(grad_imag, dtype=self.dtype, copy=True))
        else:
            self.grad.real += grad_real
            self.grad.imag += grad_imag


@dataclass(frozen=True)
class RgbdScene:
    """Colour raster in [0, 1] plus metric depth map in meters."""
    color: np.ndarray
    depth: np.ndarray
    depth_max: float

    def __post_init__(self):
        color = np.array(self.color, dtype=np.float64, copy=True)
        depth = np.array(self.depth, dtype=np.float64, copy=True)
        if color.ndim != 3 or color.shape[2] != 3:
            raise DimensionError(f"color must be (H, W, 3), got {color.shape}")
        if depth.shape != color.shape[:2]:
            raise DimensionError(f"depth {depth.shape} and color {color.shape[:2]} differ")
        if np.any(color < 0) or np.any(color > 1):
            raise DomainError("color values must lie in [0, 1]")
        if self.depth_max < 0:
            raise DomainError(f"depth_max must be >= 0, got {self.depth_max}")
        # 1e-15 m slack absorbs round-off from depth scaling
        if np.any(depth < 0) or np.any(depth > self.depth_max * (1 + 1e-12) + 1e-15):
            raise RangeError(f"depth values must lie in [0, {self.depth_max}]")
        object.__setattr__(self, 'color', _readonly(color))
        object.__setattr__(self, 'depth', _readonly(np.clip(depth, 0.0, self.depth_max)))
        object.__setattr__(self, 'depth_max', float(self.depth_max))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape

    def luminance(self) -> np.ndarray:
        return self.color @ np.array([0.299, 0.587, 0.114])
