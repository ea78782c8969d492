#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import numpy as np
import pytest

from analysis import peak_depth
from cgh import (Layer, SceneSpec, generate, generate_from_layers, make_pair, procedural_scene,
                 quantize_depth, two_object_scene, upscale_scene)
from field import DEFAULT_PITCH, RgbdScene
from holo_errors import DimensionError, DomainError, RangeError
from propagation import DEFAULT_CONFIG, propagate_array, scene_depth


def _layer(rng, depth, shape=(16, 16), mask=None):
    amp = rng.uniform(0.1, 1.0, size=(3,) + shape)
    mask = np.ones(shape) if mask is None else mask
    return Layer(depth, amp * mask, mask)


def test_single_layer_at_hologram_plane(rng):
    layer = _layer(rng, 0.0)
    holo = generate_from_layers([layer])
    np.testing.assert_allclose(holo.amplitude(), layer.amplitude, atol=1e-15)


def test_two_layers_match_manual_accumulation(rng):
    mask = np.zeros((16, 16))
    mask[4:10, 4:10] = 1
    far = _layer(rng, 1.2e-3)
    near = _layer(rng, 0.5e-3, mask=mask)
    holo = generate_from_layers([near, far])
    for c, wl in enumerate(holo.wavelengths):
        acc = propagate_array(far.amplitude[c].astype(complex), DEFAULT_PITCH, wl, 0.7e-3)
        acc = acc * (1 - mask) + near.amplitude[c] * mask
        expected = propagate_array(acc, DEFAULT_PITCH, wl, 0.5e-3)
        np.testing.assert_allclose(holo.channels[c].data, expected, atol=1e-12)


def test_opaque_near_layer_hides_far_layer(rng):
    near = _layer(rng, 0.3e-3)
    far = _layer(rng, 1.0e-3)
    with_far = generate_from_layers([near, far]).as_array()
    without = generate_from_layers([near]).as_array()
    assert np.linalg.norm(with_far - without) / np.linalg.norm(without) < 1e-10


def test_layer_validation(rng):
    with pytest.raises(DimensionError):
        Layer(0.0, np.ones((3, 4, 4)), np.ones((5, 5)))
    with pytest.raises(DomainError):
        Layer(-1e-3, np.ones((3, 4, 4)), np.ones((4, 4)))
    with pytest.raises(DomainError):
        generate_from_layers([])


class TestQuantizeDepth:
    def test_bins_and_centres(self):
        depth_max = 1e-3
        depth = np.array([[0.0, 0.249e-3], [0.25e-3, depth_max]])
        scene = RgbdScene(np.full((2, 2, 3), 0.5), depth, depth_max)
        stack = quantize_depth(scene, 4)
        np.testing.assert_array_equal(stack.labels, [[0, 0], [1, 3]])
        np.testing.assert_allclose(stack.depths, [0.125e-3, 0.375e-3, 0.625e-3, 0.875e-3])
        assert stack.occupied() == [0, 1, 3]

    def test_every_pixel_owned_once(self):
        scene = procedural_scene(SceneSpec(seed=5, resolution=24, depth_max=1e-3))
        stack = quantize_depth(scene, 8)
        total = sum(stack.occupancy(i) for i in range(stack.n_layers))
        np.testing.assert_array_equal(total, np.ones(scene.shape))

    def test_zero_layers(self):
        scene = RgbdScene(np.zeros((2, 2, 3)), np.zeros((2, 2)), 1e-3)
        with pytest.raises(DomainError):
            quantize_depth(scene, 0)


def test_generation_is_deterministic():
    scene = procedural_scene(SceneSpec(seed=11, resolution=16, depth_max=scene_depth(16, DEFAULT_PITCH)))
    a = generate(scene, n_layers=6).as_array()
    b = generate(scene, n_layers=6, workers=3).as_array()
    np.testing.assert_array_equal(a, b)


def test_random_phase_is_seeded():
    scene = procedural_scene(SceneSpec(seed=2, resolution=12, depth_max=1e-4))
    first = generate(scene, n_layers=3, phase_mode='random', seed=7).as_array()
    again = generate(scene, n_layers=3, phase_mode='random', seed=7).as_array()
    other = generate(scene, n_layers=3, phase_mode='random', seed=8).as_array()
    np.testing.assert_array_equal(first, again)
    assert not np.allclose(first, other)


def test_midpoint_placement():
    scene = procedural_scene(SceneSpec(seed=3, resolution=12, depth_max=1e-4))
    base = generate(scene, n_layers=3)
    mid = generate(scene, n_layers=3, placement='midpoint')
    expected = propagate_array(base.channels[1].data, DEFAULT_PITCH, base.wavelengths[1], -0.5e-4,
                               DEFAULT_CONFIG)
    np.testing.assert_allclose(mid.channels[1].data, expected, atol=1e-12)


def test_unknown_modes():
    scene = procedural_scene(SceneSpec(seed=3, resolution=8, depth_max=1e-4))
    with pytest.raises(DomainError):
        generate(scene, n_layers=2, placement='far')
    with pytest.raises(DomainError):
        generate(scene, n_layers=2, phase_mode='speckle')


def test_upscale_scene():
    scene = two_object_scene(8, (0.0, 2e-4), 3e-4)
    big = upscale_scene(scene, 3)
    assert big.shape == (24, 24)
    assert big.depth_max == pytest.approx(9e-4)
    assert big.depth[0, -1] == pytest.approx(6e-4)
    np.testing.assert_array_equal(big.color[:3, :3], np.broadcast_to(scene.color[0, 0], (3, 3, 3)))


class TestMakePair:
    def test_unit_scale_gives_identical_holograms(self):
        scene = procedural_scene(SceneSpec(seed=1, resolution=8, depth_max=scene_depth(8, DEFAULT_PITCH)))
        lr, hr, _ = make_pair(scene, 1, 8, n_layers=4)
        np.testing.assert_array_equal(lr.as_array(), hr.as_array())

    def test_shapes_and_depths(self, make_samples):
        sample = make_samples(1, resolution=8, scale=2)[0]
        assert sample.lr.shape == (8, 8)
        assert sample.hr.shape == (16, 16)
        assert sample.entry.depth_max_hr_m == pytest.approx(2 * sample.entry.depth_max_lr_m)
        assert sample.depth_hr.max() <= sample.entry.depth_max_hr_m * (1 + 1e-12)

    def test_depth_range_too_large(self):
        depth_max = 1.5 * scene_depth(8, DEFAULT_PITCH)
        scene = procedural_scene(SceneSpec(seed=1, resolution=8, depth_max=depth_max))
        with pytest.raises(RangeError):
            make_pair(scene, 2, 8, n_layers=2)

    def test_resolution_mismatch(self):
        scene = procedural_scene(SceneSpec(seed=1, resolution=8, depth_max=1e-4))
        with pytest.raises(DimensionError):
            make_pair(scene, 2, 16, n_layers=2)

    def test_non_integer_scale(self):
        scene = procedural_scene(SceneSpec(seed=1, resolution=8, depth_max=1e-4))
        with pytest.raises(DomainError):
            make_pair(scene, 1.5, 8)

    @pytest.mark.parametrize("n_layers, hr_layers", [(None, 16), (4, 8)])
    def test_hr_layer_count_follows_hr_side(self, n_layers, hr_layers):
        scene = procedural_scene(SceneSpec(seed=6, resolution=8, depth_max=scene_depth(8, DEFAULT_PITCH)))
        lr, hr, hr_scene = make_pair(scene, 2, 8, n_layers=n_layers)
        np.testing.assert_array_equal(lr.as_array(), generate(scene, n_layers=n_layers or 8).as_array())
        np.testing.assert_array_equal(hr.as_array(), generate(hr_scene, n_layers=hr_layers).as_array())


class TestProceduralScene:
    def test_deterministic_and_in_range(self):
        spec = SceneSpec(seed=4, resolution=32, depth_max=1e-3, depth_min=2e-4)
        a, b = procedural_scene(spec), procedural_scene(spec)
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.color, b.color)
        assert a.depth.min() >= 2e-4
        assert a.depth.max() <= 1e-3

    def test_spec_validation(self):
        with pytest.raises(DomainError):
            SceneSpec(seed=0, kinds=('torus',))
        with pytest.raises(RangeError):
            SceneSpec(seed=0, depth_min=1e-3, depth_max=1e-4)
        with pytest.raises(DomainError):
            SceneSpec(seed=0, n_primitives=0, back_plane=False)

    def test_back_plane_only(self):
        scene = procedural_scene(SceneSpec(seed=3, n_primitives=0, resolution=16, depth_max=1e-3))
        np.testing.assert_array_equal(scene.depth, 1e-3)
        assert set(np.unique(scene.color)) == {0.3, 0.7}

    def test_seeds_give_distinct_depth_histograms(self):
        seen = set()
        for seed in range(200):
            scene = procedural_scene(SceneSpec(seed=seed, resolution=24, depth_max=1e-3))
            counts, _ = np.histogram(scene.depth, bins=32, range=(0.0, 1e-3))
            seen.add(counts.tobytes())
        assert len(seen) == 200


def test_two_object_scene():
    scene = two_object_scene(16, (1e-4, 5e-4), 6e-4, seed=2)
    np.testing.assert_array_equal(scene.depth[:, :8], 1e-4)
    np.testing.assert_array_equal(scene.depth[:, 8:], 5e-4)
    np.testing.assert_array_equal(scene.color[..., 0], scene.color[..., 2])
    with pytest.raises(DomainError):
        two_object_scene(3, (0.0, 0.0), 1e-4, cell=2)


def _point_scene(side, layer_index):
    """One bright pixel in a black scene, all at the centre depth of one layer bin."""
    depth_max = scene_depth(side, DEFAULT_PITCH)
    z0 = (layer_index + 0.5) * depth_max / side
    color = np.zeros((side, side, 3))
    color[side // 2, side // 2] = 1.0
    return RgbdScene(color, np.full((side, side), z0), depth_max), z0


class TestFocusOfGeneratedHolograms:
    def test_isolated_point_refocuses_at_its_depth(self):
        scene, z0 = _point_scene(64, 47)
        holo = generate(scene)
        grid = np.linspace(0.0, scene.depth_max, 32)
        assert abs(peak_depth(holo.channels[1], grid) - z0) <= grid[1] - grid[0]

    def test_hr_peak_sits_at_scaled_depth(self):
        scene, z0 = _point_scene(64, 47)
        lr, hr, hr_scene = make_pair(scene, 2, 64)
        lr_grid = np.linspace(0.0, scene.depth_max, 32)
        hr_grid = np.linspace(0.0, hr_scene.depth_max, 32)
        lr_peak = peak_depth(lr.channels[1], lr_grid)
        hr_peak = peak_depth(hr.channels[1], hr_grid)
        assert abs(lr_peak - z0) <= lr_grid[1] - lr_grid[0]
        assert abs(hr_peak - 2 * z0) <= hr_grid[1] - hr_grid[0]
