#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Named complex parameters with gradient buffers."""
import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from holo_errors import ConfigError, DimensionError


@dataclass
class ComplexParameter:
    """Real/imaginary buffer pair plus gradient dL/dRe + i dL/dIm."""
    name: str
    real: np.ndarray
    imag: np.ndarray
    trainable: bool = True
    grad_real: np.ndarray = field(default=None, repr=False)
    grad_imag: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise DimensionError(
                f"{self.name}: real {self.real.shape} and imaginary {self.imag.shape} differ")
        if self.grad_real is None:
            self.grad_real = np.zeros_like(self.real)
        if self.grad_imag is None:
            self.grad_imag = np.zeros_like(self.imag)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.real.shape

    @property
    def size(self) -> int:
        return int(self.real.size)

    def value(self) -> np.ndarray:
        return self.real + 1j * self.imag

    def zero_grad(self):
        self.grad_real[...] = 0
        self.grad_imag[...] = 0

    def add_grad(self, grad_real: np.ndarray, grad_imag: np.ndarray):
        if grad_real.shape != self.shape:
            raise DimensionError(f"{self.name}: gradient {grad_real.shape} != {self.shape}")
        self.grad_real += grad_real
        self.grad_imag += grad_imag


class ParamStore:
    """Ordered, uniquely named parameter collection."""

    def __init__(self):
        self._params: 'OrderedDict[str, ComplexParameter]' = OrderedDict()

    def add(self, name: str, real: np.ndarray, imag: np.ndarray,
            trainable: bool = True) -> ComplexParameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        param = ComplexParameter(name, np.asarray(real), np.asarray(imag), trainable)
        self._params[name] = param
        return param

    def remove(self, name: str):
        self._params.pop(name)

    def __getitem__(self, name: str) -> ComplexParameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[ComplexParameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def get(self, name: str) -> Optional[ComplexParameter]:
        return self._params.get(name)

    def trainable(self) -> List[ComplexParameter]:
        return [p for p in self._params.values() if p.trainable]

    def set_trainable(self, flag: bool, prefix: str = ''):
        for p in self._params.values():
            if p.name.startswith(prefix):
                p.trainable = flag

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def count(self, trainable_only: bool = False) -> int:
        """Number of real scalars stored (two per complex entry)."""
        params = self.trainable() if trainable_only else list(self._params.values())
        return sum(2 * p.size for p in params)

    def state_hash(self, prefix: str = '', exclude: Optional[str] = None) -> str:
        """SHA-256 over names and buffers, used to prove the backbone stayed frozen."""
        digest = hashlib.sha256()
        for p in self._params.values():
            if not p.name.startswith(prefix) or (exclude and p.name.startswith(exclude)):
                continue
            digest.update(p.name.encode('utf-8'))
            digest.update(np.ascontiguousarray(p.real, dtype=np.float64).tobytes())
            digest.update(np.ascontiguousarray(p.imag, dtype=np.float64).tobytes())
        return digest.hexdigest()

    def cast(self, dtype):
        for p in self._params.values():
            p.real = p.real.astype(dtype)
            p.imag = p.imag.astype(dtype)
            p.grad_real = p.grad_real.astype(dtype)
            p.grad_imag = p.grad_imag.astype(dtype)

    def copy(self) -> 'ParamStore':
        clone = ParamStore()
        for p in self._params.values():
            clone.add(p.name, p.real.copy(), p.imag.copy(), p.trainable)
        return clone

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """Flat name -> array mapping, for npz state files."""
        arrays = {}
        for p in self._params.values():
            arrays[f"{p.name}:real"] = p.real
            arrays[f"{p.name}:imag"] = p.imag
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        for p in self._params.values():
            real = np.asarray(arrays[f"{p.name}:real"])
            if real.shape != p.shape:
                raise DimensionError(f"{p.name}: stored shape {real.shape} != {p.shape}")
            p.real = real.astype(p.real.dtype)
            p.imag = np.asarray(arrays[f"{p.name}:imag"]).astype(p.imag.dtype)
