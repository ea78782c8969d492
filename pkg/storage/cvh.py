#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""CVH1 complex-field container.

Layout (little endian): b'CVH1', u32 height, u32 width, u32 channels,
f64 pitch, f64 wavelength per channel, then per channel row-major f32
(re, im) pairs.
"""
import logging
import struct
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from field import ComplexField, HologramRGB
from holo_errors import DimensionError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b'CVH1'
_HEADER = struct.Struct('<4sIIId')

PathLike = Union[str, Path]


def encode_fields(fields: Sequence[ComplexField]) -> bytes:
    if not fields:
        raise DimensionError("nothing to write: no channels")
    h, w = fields[0].shape
    pitch = fields[0].pitch
    for f in fields:
        if f.shape != (h, w) or f.pitch != pitch:
            raise DimensionError("all channels of a container share shape and pitch")
    parts = [_HEADER.pack(MAGIC, h, w, len(fields), pitch),
             np.asarray([f.wavelength for f in fields], dtype='<f8').tobytes()]
    for f in fields:
        pairs = np.empty((h, w, 2), dtype='<f4')
        pairs[..., 0] = f.data.real
        pairs[..., 1] = f.data.imag
        parts.append(pairs.tobytes())
    return b''.join(parts)


def decode_fields(blob: bytes, path: str = None) -> List[ComplexField]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0, path=path)
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", offset=len(blob), path=path)
    _, h, w, c, pitch = _HEADER.unpack_from(blob, 0)
    if c == 0 or h == 0 or w == 0:
        raise FormatError(f"empty geometry {h}x{w}x{c}", offset=4, path=path)
    offset = _HEADER.size
    wl_end = offset + 8 * c
    if len(blob) < wl_end:
        raise FormatError("truncated wavelength table", offset=len(blob), path=path)
    wavelengths = np.frombuffer(blob, dtype='<f8', count=c, offset=offset)
    offset = wl_end
    expected = offset + c * h * w * 8
    if len(blob) != expected:
        kind = "truncated" if len(blob) < expected else "trailing bytes after"
        raise FormatError(f"{kind} payload: expected {expected} bytes, got {len(blob)}",
                          offset=min(len(blob), expected), path=path)
    pairs = np.frombuffer(blob, dtype='<f4', offset=offset).reshape(c, h, w, 2)
    data = pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64)
    try:
        return [ComplexField(data[i], pitch, float(wavelengths[i])) for i in range(c)]
    except ValueError as e:
        raise FormatError(f"invalid field metadata: {e}", offset=_HEADER.size - 8, path=path)


def save_fields(path: PathLike, fields: Sequence[ComplexField]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_fields(fields))
    logger.debug(f"wrote {len(fields)} channel(s) to {path}")


def load_fields(path: PathLike) -> List[ComplexField]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError("file not found", path=str(path))
    return decode_fields(blob, str(path))


def save_hologram(path: PathLike, holo: HologramRGB):
    save_fields(path, holo.channels)


def load_hologram(path: PathLike) -> HologramRGB:
    fields = load_fields(path)
    if len(fields) != 3:
        raise FormatError(f"expected 3 colour channels, found {len(fields)}", offset=12, path=str(path))
    try:
        return HologramRGB(tuple(fields))
    except ValueError as e:
        raise FormatError(f"invalid colour hologram: {e}", offset=_HEADER.size, path=str(path))
