#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Layer-based CGH with silhouette occlusion, depth pairing and procedural scenes."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from field import DEFAULT_PITCH, WAVELENGTHS_RGB, ComplexField, HologramRGB, RgbdScene
from holo_errors import DimensionError, DomainError, RangeError
from propagation import DEFAULT_CONFIG, PropagationConfig, propagate_array, scene_depth

logger = logging.getLogger(__name__)

PHASE_MODES = ('zero', 'random')
PLACEMENTS = ('zero', 'midpoint')
PRIMITIVE_KINDS = ('sphere', 'box', 'plane')


@dataclass(frozen=True)
class Layer:
    """One depth slice: positive depth, (3, H, W) amplitude and a 0/1 mask."""
    depth: float
    amplitude: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        amplitude = np.asarray(self.amplitude, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if amplitude.ndim != 3 or amplitude.shape[0] != 3:
            raise DimensionError(f"layer amplitude must be (3, H, W), got {amplitude.shape}")
        if mask.shape != amplitude.shape[1:]:
            raise DimensionError(f"layer mask {mask.shape} != amplitude {amplitude.shape[1:]}")
        if self.depth < 0:
            raise DomainError(f"layer depth must be >= 0, got {self.depth}")
        object.__setattr__(self, 'amplitude', amplitude)
        object.__setattr__(self, 'mask', mask)


@dataclass(frozen=True)
class LayerStack:
    """Depth-quantized scene; each pixel is owned by exactly one layer."""
    depths: np.ndarray
    labels: np.ndarray
    color: np.ndarray
    depth_max: float

    @property
    def n_layers(self) -> int:
        return len(self.depths)

    @property
    def step(self) -> float:
        return self.depth_max / self.n_layers

    def occupancy(self, index: int) -> np.ndarray:
        return (self.labels == index).astype(np.float64)

    def amplitude(self, index: int) -> np.ndarray:
        """Masked amplitude raster of one layer, shape (3, H, W)."""
        return np.moveaxis(self.color, 2, 0) * self.occupancy(index)[None]

    def occupied(self) -> List[int]:
        return [int(i) for i in np.unique(self.labels)]

    def to_layers(self) -> List[Layer]:
        return [Layer(float(self.depths[i]), self.amplitude(i), self.occupancy(i))
                for i in self.occupied()]


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one procedurally rendered RGB-D scene."""
    seed: int
    n_primitives: int = 6
    kinds: Tuple[str, ...] = PRIMITIVE_KINDS
    depth_min: float = 0.0
    depth_max: float = scene_depth(256, DEFAULT_PITCH)
    resolution: int = 256
    back_plane: bool = True

    def __post_init__(self):
        if self.n_primitives < 0 or (self.n_primitives == 0 and not self.back_plane):
            raise DomainError("a scene needs at least one primitive or a back plane")
        unknown = [k for k in self.kinds if k not in PRIMITIVE_KINDS]
        if unknown or not self.kinds:
            raise DomainError(f"unknown primitive kinds {unknown}; choose from {PRIMITIVE_KINDS}")
        if not 0 <= self.depth_min < self.depth_max:
            raise RangeError(f"invalid depth range [{self.depth_min}, {self.depth_max}]")
        if self.resolution < 2:
            raise DomainError(f"resolution must be >= 2, got {self.resolution}")


def quantize_depth(scene: RgbdScene, n_layers: int) -> LayerStack:
    """Bin depths into n_layers equal slabs; layer depth is the slab centre."""
    if n_layers < 1:
        raise DomainError(f"n_layers must be >= 1, got {n_layers}")
    step = scene.depth_max / n_layers
    if step > 0:
        labels = np.clip(np.floor(scene.depth / step).astype(np.int64), 0, n_layers - 1)
    else:
        labels = np.zeros(scene.shape, dtype=np.int64)
    depths = (np.arange(n_layers) + 0.5) * step
    return LayerStack(depths, labels, scene.color, scene.depth_max)


def _layer_phase(rng: Optional[np.random.Generator], shape) -> np.ndarray:
    if rng is None:
        return np.ones(shape, dtype=np.complex128)
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=shape))


def _generate_channel(layers: Sequence[Layer], channel: int, pitch: float, wavelength: float,
                      config: PropagationConfig, phase_mode: str, seed: int) -> np.ndarray:
    shape = layers[0].mask.shape
    rng = None
    if phase_mode == 'random':
        rng = np.random.default_rng(np.random.SeedSequence([seed, channel]))
    acc = np.zeros(shape, dtype=np.complex128)
    z_prev = None
    for layer in sorted(layers, key=lambda l: l.depth, reverse=True):
        if z_prev is not None and z_prev != layer.depth:
            acc = propagate_array(acc, pitch, wavelength, z_prev - layer.depth, config)
        acc = acc * (1.0 - layer.mask) + layer.amplitude[channel] * layer.mask * _layer_phase(rng, shape)
        z_prev = layer.depth
    if z_prev:
        acc = propagate_array(acc, pitch, wavelength, z_prev, config)
    return acc


def generate_from_layers(layers: Sequence[Layer], pitch: float = DEFAULT_PITCH,
                         wavelengths: Sequence[float] = WAVELENGTHS_RGB,
                         config: PropagationConfig = DEFAULT_CONFIG,
                         phase_mode: str = 'zero', seed: int = 0,
                         workers: int = 1) -> HologramRGB:
    """Accumulate layers far to near with silhouette carving, then carry to z = 0."""
    if not layers:
        raise DomainError("at least one layer is required")
    if phase_mode not in PHASE_MODES:
        raise DomainError(f"phase_mode must be one of {PHASE_MODES}, got {phase_mode!r}")
    shape = layers[0].mask.shape
    for layer in layers:
        if layer.mask.shape != shape:
            raise DimensionError(f"layer shapes differ: {shape} vs {layer.mask.shape}")

    def run(channel: int) -> np.ndarray:
        return _generate_channel(layers, channel, pitch, wavelengths[channel], config,
                                 phase_mode, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, 3)) as pool:
            planes = list(pool.map(run, range(3)))
    else:
        planes = [run(c) for c in range(3)]
    return HologramRGB.from_array(np.stack(planes), pitch, wavelengths)


def generate(scene: RgbdScene, pitch: float = DEFAULT_PITCH,
             wavelengths: Sequence[float] = WAVELENGTHS_RGB,
             n_layers: Optional[int] = None,
             config: PropagationConfig = DEFAULT_CONFIG,
             phase_mode: str = 'zero', seed: int = 0,
             placement: str = 'zero', workers: int = 1) -> HologramRGB:
    """Silhouette-masked layer-based hologram of an RGB-D scene.

    Args:
        scene: colour is used directly as field amplitude.
        n_layers: defaults to the scene's side length.
        placement: 'zero' puts the hologram plane at depth 0 (dataset default);
            'midpoint' returns the field at the middle of the depth range.

    Returns:
        HologramRGB with the scene's resolution.
    """
    if placement not in PLACEMENTS:
        raise DomainError(f"placement must be one of {PLACEMENTS}, got {placement!r}")
    n_layers = n_layers or max(scene.shape)
    stack = quantize_depth(scene, n_layers)
    logger.debug(f"generating {scene.shape} hologram: {len(stack.occupied())}/{n_layers} layers occupied")
    holo = generate_from_layers(stack.to_layers(), pitch, wavelengths, config, phase_mode, seed, workers)
    if placement == 'midpoint':
        shift = -scene.depth_max / 2
        holo = holo.map(lambda ch: ch.with_data(
            propagate_array(ch.data, ch.pitch, ch.wavelength, shift, config)))
    return holo


def upscale_scene(scene: RgbdScene, s: int) -> RgbdScene:
    """Nearest-neighbour s-fold raster upscaling with depths multiplied by s."""
    color = np.repeat(np.repeat(scene.color, s, axis=0), s, axis=1)
    depth = np.repeat(np.repeat(scene.depth, s, axis=0), s, axis=1) * s
    return RgbdScene(color, depth, scene.depth_max * s)


def make_pair(scene: RgbdScene, s: int, lr_resolution: Union[int, Tuple[int, int]],
              pitch: float = DEFAULT_PITCH, n_layers: Optional[int] = None,
              wavelengths: Sequence[float] = WAVELENGTHS_RGB,
              config: PropagationConfig = DEFAULT_CONFIG,
              workers: int = 1) -> Tuple[HologramRGB, HologramRGB, RgbdScene]:
    """LR hologram plus the HR hologram of the same scene at s-fold size and depth.

    Both holograms share the pixel pitch, so the HR volume is s times larger
    along every axis. The layer count follows each hologram's own side
    length; an explicit n_layers applies to the LR side and is multiplied by s
    for the HR hologram.
    """
    if s < 1 or int(s) != s:
        raise DomainError(f"scale must be a positive integer, got {s}")
    if isinstance(lr_resolution, int):
        lr_resolution = (lr_resolution, lr_resolution)
    if tuple(scene.shape) != tuple(lr_resolution):
        raise DimensionError(f"scene {scene.shape} does not match LR resolution {lr_resolution}")
    side = max(lr_resolution)
    hr_scene = upscale_scene(scene, int(s))
    limit = scene_depth(int(s) * side, pitch)
    if hr_scene.depth_max > limit * (1 + 1e-9):
        raise RangeError(
            f"scaled depth range {hr_scene.depth_max:.6g} m exceeds {limit:.6g} m "
            f"for {int(s) * side}px at pitch {pitch}")
    lr_layers = n_layers or side
    lr = generate(scene, pitch, wavelengths, lr_layers, config, workers=workers)
    hr = generate(hr_scene, pitch, wavelengths, int(s) * lr_layers, config, workers=workers)
    return lr, hr, hr_scene


def point_hologram(shape: Tuple[int, int], pitch: float, wavelength: float, z0: float,
                   center: Optional[Tuple[int, int]] = None,
                   config: PropagationConfig = DEFAULT_CONFIG) -> ComplexField:
    """Zone plate: a single bright pixel at depth z0 carried to the hologram plane."""
    h, w = shape
    cy, cx = center if center is not None else (h // 2, w // 2)
    point = np.zeros(shape, dtype=np.complex128)
    point[cy, cx] = 1.0
    return ComplexField(propagate_array(point, pitch, wavelength, z0, config), pitch, wavelength)


def _render_primitive(kind: str, rng: np.random.Generator, spec: SceneSpec,
                      yy: np.ndarray, xx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Depth (inf outside the primitive) and shading factor for one primitive."""
    n = spec.resolution
    span = spec.depth_max - spec.depth_min
    cy, cx = rng.uniform(0.15 * n, 0.85 * n, size=2)
    z_center = spec.depth_min + rng.uniform(0.1, 0.9) * span
    depth = np.full((n, n), np.inf)
    shade = np.ones((n, n))
    if kind == 'sphere':
        radius = rng.uniform(0.05, 0.2) * n
        rho2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / radius ** 2
        inside = rho2 < 1
        cap = np.sqrt(np.clip(1 - rho2, 0, 1))
        z_extent = rng.uniform(0.02, 0.1) * span
        depth[inside] = z_center - z_extent * cap[inside]
        shade = 0.4 + 0.6 * cap
    elif kind == 'box':
        hy, hx = rng.uniform(0.05, 0.18, size=2) * n
        inside = (np.abs(yy - cy) < hy) & (np.abs(xx - cx) < hx)
        depth[inside] = z_center
    else:
        hy, hx = rng.uniform(0.1, 0.3, size=2) * n
        inside = (np.abs(yy - cy) < hy) & (np.abs(xx - cx) < hx)
        slope = rng.uniform(-0.3, 0.3) * span / n
        depth[inside] = (z_center + slope * (xx - cx))[inside]
        shade = np.full((n, n), 0.85)
    depth = np.where(np.isfinite(depth), np.clip(depth, spec.depth_min, spec.depth_max), np.inf)
    return depth, shade


def procedural_scene(spec: SceneSpec) -> RgbdScene:
    """Z-buffered spheres, boxes and tilted planes with random albedo."""
    rng = np.random.default_rng(spec.seed)
    n = spec.resolution
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    zbuf = np.full((n, n), np.inf)
    color = np.zeros((n, n, 3))
    for _ in range(spec.n_primitives):
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        albedo = rng.uniform(0.2, 1.0, size=3)
        depth, shade = _render_primitive(kind, rng, spec, yy, xx)
        nearer = depth < zbuf
        zbuf[nearer] = depth[nearer]
        color[nearer] = shade[nearer, None] * albedo[None, :]
    empty = ~np.isfinite(zbuf)
    zbuf[empty] = spec.depth_max
    if spec.back_plane:
        # checkerboard floor at the far end gives a far-focus reference
        cell = max(n // 8, 1)
        checker = ((yy // cell + xx // cell) % 2 == 0)
        floor = np.where(checker, 0.7, 0.3)
        color[empty] = floor[empty, None]
    return RgbdScene(np.clip(color, 0.0, 1.0), zbuf, spec.depth_max)


def two_object_scene(resolution: int, depths: Tuple[float, float], depth_max: float,
                     seed: int = 0, cell: int = 2) -> RgbdScene:
    """Two flat textured objects side by side (left half, right half) at fixed depths."""
    if resolution < 2 * cell:
        raise DomainError(f"resolution {resolution} too small for {cell}px texture cells")
    rng = np.random.default_rng(seed)
    n = resolution
    cells = -(-n // cell)
    texture = rng.uniform(0.1, 1.0, size=(cells, cells))
    texture = np.repeat(np.repeat(texture, cell, axis=0), cell, axis=1)[:n, :n]
    depth = np.empty((n, n))
    depth[:, :n // 2] = depths[0]
    depth[:, n // 2:] = depths[1]
    color = np.repeat(texture[:, :, None], 3, axis=2)
    return RgbdScene(color, depth, depth_max)
