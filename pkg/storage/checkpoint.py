#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""CVW1 weight checkpoints, CVL1 adapter files and full-precision training state."""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from holo_errors import FormatError

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b'CVW1'
ADAPTER_MAGIC = b'CVL1'

PathLike = Union[str, Path]

# name -> (real, imag)
ArrayPairs = List[Tuple[str, np.ndarray, np.ndarray]]


class _Reader:
    """Bounds-checked cursor over a byte buffer."""

    def __init__(self, blob: bytes, path: Optional[str]):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(f"truncated while reading {what}", offset=self.offset, path=self.path)
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack('<I', self.take(4, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack('<d', self.take(8, what))[0]

    def array(self, shape: Tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype='<f4').reshape(shape).astype(np.float64)

    def done(self):
        if self.offset != len(self.blob):
            raise FormatError("trailing bytes after last record", offset=self.offset, path=self.path)


def _pack_pair(name: str, real: np.ndarray, imag: np.ndarray) -> bytes:
    encoded = name.encode('utf-8')
    parts = [struct.pack('<I', len(encoded)), encoded, struct.pack('<I', real.ndim)]
    parts += [struct.pack('<I', d) for d in real.shape]
    parts.append(np.ascontiguousarray(real, dtype='<f4').tobytes())
    parts.append(np.ascontiguousarray(imag, dtype='<f4').tobytes())
    return b''.join(parts)


def _read_pair(reader: _Reader) -> Tuple[str, np.ndarray, np.ndarray]:
    name_len = reader.u32("name length")
    try:
        name = reader.take(name_len, "name").decode('utf-8')
    except UnicodeDecodeError:
        raise FormatError("parameter name is not UTF-8", offset=reader.offset - name_len, path=reader.path)
    ndim = reader.u32(f"{name} rank")
    if ndim > 8:
        raise FormatError(f"{name}: implausible rank {ndim}", offset=reader.offset - 4, path=reader.path)
    shape = tuple(reader.u32(f"{name} shape") for _ in range(ndim))
    real = reader.array(shape, f"{name} real buffer")
    imag = reader.array(shape, f"{name} imaginary buffer")
    return name, real, imag


def encode_weights(pairs: ArrayPairs) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack('<I', len(pairs))]
    parts += [_pack_pair(name, real, imag) for name, real, imag in pairs]
    return b''.join(parts)


def decode_weights(blob: bytes, path: Optional[str] = None) -> ArrayPairs:
    if blob[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {WEIGHTS_MAGIC!r}", offset=0, path=path)
    reader = _Reader(blob, path)
    reader.offset = 4
    count = reader.u32("parameter count")
    pairs = [_read_pair(reader) for _ in range(count)]
    reader.done()
    return pairs


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.json')


def save_checkpoint(path: PathLike, store, metadata: Optional[Dict[str, Any]] = None):
    """Write every parameter of a ParamStore in store order plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pairs = [(p.name, p.real, p.imag) for p in store]
    path.write_bytes(encode_weights(pairs))
    with open(sidecar_path(path), 'w', encoding='utf-8') as f:
        json.dump(metadata or {}, f, indent=2, sort_keys=True)
    logger.info(f"checkpoint saved: {path} ({len(pairs)} tensors)")


def load_checkpoint(path: PathLike) -> Tuple[ArrayPairs, Dict[str, Any]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError("checkpoint not found", path=str(path))
    pairs = decode_weights(blob, str(path))
    metadata = {}
    side = sidecar_path(path)
    if side.exists():
        with open(side, 'r', encoding='utf-8') as f:
            metadata = json.load(f)
    return pairs, metadata


def encode_adapters(adapters: List[Dict[str, Any]]) -> bytes:
    """Each adapter dict carries target, rank, alpha and the complex A and B factors."""
    parts = [ADAPTER_MAGIC, struct.pack('<I', len(adapters))]
    for a in adapters:
        target = a['target'].encode('utf-8')
        parts += [struct.pack('<I', len(target)), target,
                  struct.pack('<I', a['rank']), struct.pack('<d', a['alpha'])]
        parts.append(_pack_pair('A', a['A'].real, a['A'].imag))
        parts.append(_pack_pair('B', a['B'].real, a['B'].imag))
    return b''.join(parts)


def decode_adapters(blob: bytes, path: Optional[str] = None) -> List[Dict[str, Any]]:
    if blob[:4] != ADAPTER_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {ADAPTER_MAGIC!r}", offset=0, path=path)
    reader = _Reader(blob, path)
    reader.offset = 4
    adapters = []
    for _ in range(reader.u32("adapter count")):
        n = reader.u32("target length")
        target = reader.take(n, "target").decode('utf-8', errors='replace')
        rank = reader.u32("rank")
        alpha = reader.f64("alpha")
        _, ar, ai = _read_pair(reader)
        _, br, bi = _read_pair(reader)
        adapters.append({'target': target, 'rank': rank, 'alpha': alpha,
                         'A': ar + 1j * ai, 'B': br + 1j * bi})
    reader.done()
    return adapters


def save_adapters(path: PathLike, adapters: List[Dict[str, Any]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_adapters(adapters))
    logger.info(f"adapters saved: {path} ({len(adapters)} targets)")


def load_adapters_file(path: PathLike) -> List[Dict[str, Any]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise FormatError("adapter file not found", path=str(path))
    return decode_adapters(blob, str(path))


def state_path(checkpoint: PathLike) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + '.state.npz')


def save_state(path: PathLike, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]):
    """Full-precision resumable state (parameters, moments, counters)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(arrays)
    payload['__meta__'] = np.frombuffer(json.dumps(meta, sort_keys=True).encode('utf-8'), dtype=np.uint8)
    with open(path, 'wb') as f:
        np.savez(f, **payload)


def load_state(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FormatError("training state not found", path=str(path))
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files if k != '__meta__'}
        meta = json.loads(bytes(data['__meta__']).decode('utf-8')) if '__meta__' in data.files else {}
    return arrays, meta
