#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Residual dense networks: shallow features, dense blocks, fusion, sub-pixel head.

The complex network is the main model; a real-valued twin on stacked
real/imaginary channels serves as the ablation baseline.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from cvnn.params import ParamStore
from cvnn.tape import Tape
from cvnn.tensor_ops import (CConvParams, add, cconv2d, complex_pixel_shuffle, concat, crelu,
                             init_kernel, init_real_kernel, merge_planes, rconv2d, split_planes)
from field import ComplexTensor
from holo_errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

IN_CHANNELS = 3
OUT_CHANNELS = 3
SCALES = (2, 4, 8)
KINDS = ('complex', 'real')


@dataclass(frozen=True)
class CvRdnConfig:
    """Network shape. B blocks of D convs, C feature channels, G growth, scale s.

    ``kind='real'`` counts C and G in real channels and feeds the network the
    six stacked real/imaginary planes of an RGB hologram.
    """
    n_blocks: int = 16
    channels: int = 32
    convs_per_block: int = 8
    growth: int = 32
    scale: int = 4
    shallow_layers: int = 2
    kernel_size: int = 3
    kind: str = 'complex'

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_blocks < 1 or self.channels < 1 or self.growth < 1:
            raise ConfigError(f"n_blocks, channels and growth must be >= 1: {self}")
        if self.convs_per_block < 2:
            raise ConfigError(f"convs_per_block must be >= 2, got {self.convs_per_block}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.shallow_layers < 1:
            raise ConfigError(f"shallow_layers must be >= 1, got {self.shallow_layers}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def is_real(self) -> bool:
        return self.kind == 'real'

    @property
    def io_channels(self) -> int:
        return 2 * IN_CHANNELS if self.is_real else IN_CHANNELS

    @property
    def up_stages(self) -> int:
        return int(round(math.log2(self.scale)))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CvRdnConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


PRESETS: Dict[str, CvRdnConfig] = {
    'tiny': CvRdnConfig(n_blocks=2, channels=4, convs_per_block=3, growth=4, scale=2),
    'toy': CvRdnConfig(n_blocks=2, channels=8, convs_per_block=4, growth=8, scale=2),
    'toy_wide': CvRdnConfig(n_blocks=2, channels=16, convs_per_block=4, growth=16, scale=2),
    'full': CvRdnConfig(n_blocks=16, channels=32, convs_per_block=8, growth=32, scale=4),
    'full_h': CvRdnConfig(n_blocks=16, channels=64, convs_per_block=8, growth=64, scale=4),
    # real baselines at twice the width of their complex counterparts
    'real_tiny': CvRdnConfig(n_blocks=2, channels=8, convs_per_block=3, growth=8, scale=2, kind='real'),
    'real_toy': CvRdnConfig(n_blocks=2, channels=16, convs_per_block=4, growth=16, scale=2, kind='real'),
    'real_full': CvRdnConfig(n_blocks=16, channels=64, convs_per_block=8, growth=64, scale=4, kind='real'),
}


def preset(name: str, **overrides) -> CvRdnConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown network preset {name!r}; available: {sorted(PRESETS)}")
    base = PRESETS[name].to_dict()
    base.update({k: v for k, v in overrides.items() if v is not None})
    return CvRdnConfig.from_dict(base)


def layer_specs(config: CvRdnConfig) -> List[Tuple[str, int, int, int]]:
    """(name, in_channels, out_channels, kernel) for every convolution, in forward order."""
    k, c, g, d = config.kernel_size, config.channels, config.growth, config.convs_per_block
    io = config.io_channels
    specs = [('sfe.0', io, c, k)]
    specs += [(f'sfe.{i}', c, c, k) for i in range(1, config.shallow_layers)]
    for b in range(config.n_blocks):
        specs += [(f'rdb.{b}.conv.{j}', c + j * g, g, k) for j in range(d - 1)]
        specs.append((f'rdb.{b}.lff', c + (d - 1) * g, c, 1))
    specs.append(('gff.0', config.n_blocks * c, c, 1))
    specs.append(('gff.1', c, c, k))
    specs += [(f'up.{i}', c, 4 * c, k) for i in range(config.up_stages)]
    specs.append(('out', c, io, k))
    return specs


def parameter_count(config: CvRdnConfig) -> int:
    """Trainable real scalars: two per complex weight, one per real weight."""
    per_entry = 1 if config.is_real else 2
    return sum(per_entry * (cout * cin * k * k + cout) for _, cin, cout, k in layer_specs(config))


def effective_real_kernel_count(config: CvRdnConfig) -> int:
    """Size of the real network the complex one is equivalent to.

    Each complex conv runs four real convolutions; written as one real conv on
    stacked planes it is a (2 cout, 2 cin) kernel, i.e. 4 cout cin k^2 weights
    and 2 cout biases. The complex network stores half of that. For a real
    config this is just the parameter count.
    """
    if config.is_real:
        return parameter_count(config)
    return sum(4 * cout * cin * k * k + 2 * cout for _, cin, cout, k in layer_specs(config))


def real_rdn_parameter_count(n_blocks: int = 16, channels: int = 64, convs_per_block: int = 8,
                             growth: int = 64, scale: int = 4, in_channels: int = 6,
                             out_channels: int = 6, kernel_size: int = 3,
                             shallow_layers: int = 2) -> int:
    """Closed-form size of the standard real RDN on stacked real/imaginary channels."""
    k = kernel_size

    def conv(cin, cout, kk=k):
        return cin * cout * kk * kk + cout

    total = conv(in_channels, channels) + (shallow_layers - 1) * conv(channels, channels)
    for _ in range(n_blocks):
        total += sum(conv(channels + j * growth, growth) for j in range(convs_per_block - 1))
        total += conv(channels + (convs_per_block - 1) * growth, channels, 1)
    total += conv(n_blocks * channels, channels, 1) + conv(channels, channels)
    total += int(round(math.log2(scale))) * conv(channels, 4 * channels)
    total += conv(channels, out_channels)
    return total


class CvRdn:
    """Complex RDN holding its configuration, parameters and attached adapters."""

    def __init__(self, config: CvRdnConfig, seed: int = 0, dtype=np.float64,
                 params: Optional[ParamStore] = None):
        if config.is_real and type(self) is CvRdn:
            raise ConfigError("a real config builds a RealRdn; use build_model")
        self.config = config
        self.adapters: Dict[str, Any] = {}
        # HR depth range of the training data, set by the trainer or a checkpoint sidecar
        self.depth_max_hr: Optional[float] = None
        if params is None:
            params = self._init_params(seed, dtype)
        self.params = params
        self._layers = {name: self._conv(name) for name, _, _, _ in layer_specs(config)}

    def _init_params(self, seed: int, dtype) -> ParamStore:
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for name, cin, cout, k in layer_specs(self.config):
            real, imag = init_kernel(rng, cout, cin, k, dtype)
            store.add(f'{name}.weight', real, imag)
            store.add(f'{name}.bias', np.zeros(cout, dtype=dtype), np.zeros(cout, dtype=dtype))
        return store

    def _conv(self, name: str) -> CConvParams:
        weight = self.params.get(f'{name}.weight')
        if weight is None:
            raise DimensionError(f"parameter store lacks layer {name!r}")
        return CConvParams(weight, self.params.get(f'{name}.bias'))

    def conv_names(self) -> List[str]:
        return list(self._layers)

    def conv_params(self, name: str) -> CConvParams:
        return self._layers[name]

    def refresh(self):
        """Rebind layer views after parameters were replaced in the store."""
        self._layers = {name: self._conv(name) for name in self._layers}

    def _apply(self, name: str, x: ComplexTensor, tape: Optional[Tape]) -> ComplexTensor:
        y = cconv2d(x, self._layers[name], tape)
        adapter = self.adapters.get(name)
        if adapter is not None and not adapter.merged:
            y = add(y, adapter.apply(x, tape), tape)
        return y

    def rdb_forward(self, b: int, x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
        """One dense block: D-1 conv+CReLU stages, 1x1 fusion, local residual."""
        features = [x]
        for j in range(self.config.convs_per_block - 1):
            inp = concat(features, tape) if len(features) > 1 else x
            features.append(crelu(self._apply(f'rdb.{b}.conv.{j}', inp, tape), tape))
        fused = self._apply(f'rdb.{b}.lff', concat(features, tape), tape)
        return add(fused, x, tape)

    def _check_input(self, x: ComplexTensor):
        if x.shape[1] != IN_CHANNELS:
            raise DimensionError(f"network expects {IN_CHANNELS} complex channels, got {x.shape[1]}")

    def _trunk(self, x: ComplexTensor, tape: Optional[Tape]) -> ComplexTensor:
        shallow = self._apply('sfe.0', x, tape)
        h = shallow
        for i in range(1, self.config.shallow_layers):
            h = self._apply(f'sfe.{i}', h, tape)
        block_outputs = []
        for b in range(self.config.n_blocks):
            h = self.rdb_forward(b, h, tape)
            block_outputs.append(h)
        fused = block_outputs[0] if len(block_outputs) == 1 else concat(block_outputs, tape)
        h = self._apply('gff.1', self._apply('gff.0', fused, tape), tape)
        h = add(h, shallow, tape)
        for i in range(self.config.up_stages):
            h = complex_pixel_shuffle(self._apply(f'up.{i}', h, tape), 2, tape)
        return self._apply('out', h, tape)

    def forward(self, x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
        self._check_input(x)
        return self._trunk(x, tape)

    def __call__(self, x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
        return self.forward(x, tape)


class RealRdn(CvRdn):
    """Real-valued RDN on the stacked real/imaginary planes of the input hologram.

    Parameters live in the same store as the complex network with their
    imaginary buffers held at zero; the gradients reaching them are zero, so
    AdamW leaves them at zero.
    """

    def __init__(self, config: CvRdnConfig, seed: int = 0, dtype=np.float64,
                 params: Optional[ParamStore] = None):
        if not config.is_real:
            raise ConfigError("RealRdn needs a config with kind='real'")
        super().__init__(config, seed, dtype, params)

    def _init_params(self, seed: int, dtype) -> ParamStore:
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for name, cin, cout, k in layer_specs(self.config):
            real, imag = init_real_kernel(rng, cout, cin, k, dtype)
            store.add(f'{name}.weight', real, imag)
            store.add(f'{name}.bias', np.zeros(cout, dtype=dtype), np.zeros(cout, dtype=dtype))
        return store

    def _apply(self, name: str, x: ComplexTensor, tape: Optional[Tape]) -> ComplexTensor:
        return rconv2d(x, self._layers[name], tape)

    def forward(self, x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
        self._check_input(x)
        return merge_planes(self._trunk(split_planes(x, tape), tape), tape)


def build_model(config: CvRdnConfig, seed: int = 0, dtype=np.float64,
                params: Optional[ParamStore] = None) -> CvRdn:
    """Complex or real network, by ``config.kind``."""
    cls = RealRdn if config.is_real else CvRdn
    return cls(config, seed=seed, dtype=dtype, params=params)
