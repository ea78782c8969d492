#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Shared fixtures: random fields, band-limited fields, small networks and in-memory pairs."""
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import fft as sfft

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from cgh import SceneSpec, make_pair, procedural_scene  # noqa: E402
from cvnn.network import CvRdn, preset  # noqa: E402
from field import DEFAULT_PITCH, ComplexField, HologramRGB  # noqa: E402
from propagation import PropagationConfig, band_mask, scene_depth  # noqa: E402
from storage.manifest import ManifestEntry, PairSample  # noqa: E402

UNPADDED = PropagationConfig(pad_factor=1.0)


def random_complex(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_field(rng):
    def make(shape=(32, 32), wavelength=532e-9, pitch=DEFAULT_PITCH):
        return ComplexField(random_complex(rng, shape), pitch, wavelength)
    return make


@pytest.fixture
def in_band_field(rng):
    """Random field whose spectrum lies inside the unpadded band for distances up to |z|."""
    def make(shape, z, wavelength=532e-9, pitch=DEFAULT_PITCH):
        mask = band_mask(shape, pitch, wavelength, z, UNPADDED)
        data = sfft.ifft2(sfft.fft2(random_complex(rng, shape)) * mask)
        return ComplexField(data, pitch, wavelength)
    return make


@pytest.fixture
def random_hologram(rng):
    def make(shape=(16, 16)):
        return HologramRGB.from_array(random_complex(rng, (3,) + tuple(shape)))
    return make


@pytest.fixture
def tiny_model():
    return CvRdn(preset('tiny'), seed=3)


@pytest.fixture
def make_samples():
    """In-memory LR/HR pairs of small procedural scenes."""
    def make(n, resolution=8, scale=2, seed=0, fraction=1.0, n_layers=4):
        samples = []
        for i in range(n):
            spec = SceneSpec(seed=seed + i, n_primitives=2, resolution=resolution,
                             depth_max=fraction * scene_depth(resolution, DEFAULT_PITCH))
            scene = procedural_scene(spec)
            lr, hr, hr_scene = make_pair(scene, scale, resolution, n_layers=n_layers)
            entry = ManifestEntry(id=f"s{seed + i}", lr_path=f"lr/s{i}.cvh", hr_path=f"hr/s{i}.cvh",
                                  scale=scale, pitch_m=DEFAULT_PITCH, depth_max_lr_m=scene.depth_max,
                                  depth_max_hr_m=hr_scene.depth_max)
            samples.append(PairSample(entry, lr, hr, np.array(hr_scene.depth)))
        return samples
    return make


def central_difference(fn, array, indices, step=1e-7):
    """Central differences of the scalar fn() w.r.t. array entries, perturbed in place."""
    out = []
    for idx in indices:
        saved = array[idx]
        array[idx] = saved + step
        up = fn()
        array[idx] = saved - step
        down = fn()
        array[idx] = saved
        out.append((up - down) / (2 * step))
    return np.array(out)


def pick_indices(rng, shape, count):
    """Up to ``count`` distinct multi-indices into an array of ``shape``."""
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-30))


@pytest.fixture
def gradcheck():
    """Bundle of finite-difference helpers."""
    class GradCheck:
        diff = staticmethod(central_difference)
        pick = staticmethod(pick_indices)
        error = staticmethod(relative_error)
    return GradCheck
