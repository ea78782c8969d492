#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import numpy as np
import pytest

from analysis import peak_depth
from cgh import point_hologram
from field import DEFAULT_PITCH, ComplexField, HologramRGB
from holo_errors import DomainError
from propagation import propagate, scene_depth
from resample import (CalibrationRule, apodize, bicubic_upsample, bicubic_upsample_field,
                      calibrated_distance, catmull_rom_matrix, tukey_apodize, tukey_window,
                      white_hologram)

WL = 532e-9


def test_constant_field_stays_constant():
    fld = ComplexField(np.full((5, 7), 0.3 - 0.4j), DEFAULT_PITCH, WL)
    up = bicubic_upsample_field(fld, 3)
    assert up.shape == (15, 21)
    np.testing.assert_allclose(up.data, 0.3 - 0.4j, atol=1e-14)
    assert up.pitch == fld.pitch


def test_interpolation_rows_sum_to_one():
    np.testing.assert_allclose(catmull_rom_matrix(6, 4).sum(axis=1), 1.0, atol=1e-14)


def test_unit_scale_is_identity(random_hologram):
    holo = random_hologram((6, 6))
    np.testing.assert_array_equal(bicubic_upsample(holo, 1).as_array(), holo.as_array())


def test_linear_ramp_interior_is_exact():
    ramp = np.tile(np.arange(8, dtype=float), (8, 1))
    fld = ComplexField(ramp + 1j * ramp, DEFAULT_PITCH, WL)
    up = bicubic_upsample_field(fld, 2).data
    expected = (np.arange(16) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(up[4, 4:12].real, expected[4:12], atol=1e-12)
    np.testing.assert_allclose(up[4, 4:12].imag, expected[4:12], atol=1e-12)


def test_bad_scale(random_field):
    with pytest.raises(DomainError):
        bicubic_upsample_field(random_field((4, 4)), 0)


class TestCalibration:
    def test_calibrated(self):
        assert calibrated_distance(4.0e-3, 4, CalibrationRule(4, 'calibrated')) == pytest.approx(16.0e-3)
        assert calibrated_distance(-7.3728e-3, 4, CalibrationRule(4, 'calibrated')) == pytest.approx(-29.4912e-3)

    def test_uncalibrated(self):
        assert calibrated_distance(4.0e-3, 4) == 4.0e-3

    def test_rule_validation(self):
        with pytest.raises(DomainError):
            CalibrationRule(4, 'square')
        with pytest.raises(DomainError):
            CalibrationRule(0.5)


def test_white_hologram(random_field):
    data = random_field((6, 6)).data.copy()
    data[0, 0] = 0
    white = white_hologram(ComplexField(data, DEFAULT_PITCH, WL))
    np.testing.assert_allclose(np.abs(white.data), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.angle(white.data[1:, 1:]), np.angle(data[1:, 1:]), atol=1e-12)
    assert white.data[0, 0] == 1.0


class TestTukey:
    def test_alpha_zero_is_identity(self, random_field):
        fld = random_field((8, 8))
        assert tukey_apodize(fld, 0.0) is fld

    def test_edges_vanish_centre_kept(self):
        window = tukey_window((9, 9), 0.5)
        assert window[0, 0] == pytest.approx(0.0)
        assert window[4, 4] == pytest.approx(1.0)
        np.testing.assert_allclose(window, window.T)

    def test_alpha_range(self):
        with pytest.raises(DomainError):
            tukey_window((4, 4), 1.5)

    def test_apodize_dispatch(self, random_field):
        fld = random_field((8, 8))
        assert apodize(fld, 'none') is fld
        np.testing.assert_allclose(np.abs(apodize(fld, 'white').data), 1.0)
        with pytest.raises(DomainError):
            apodize(fld, 'hann')


def _sweep_l1(candidate, target, depths):
    return sum(np.mean(np.abs(np.abs(propagate(candidate, -z).data) - np.abs(propagate(target, -z).data)))
               for z in depths)


@pytest.mark.parametrize("mode", ['white', 'tukey'])
def test_shared_apodization_keeps_candidate_ranking(random_field, rng, mode):
    depths = (0.0, 1e-4, 3e-4)
    for _ in range(5):
        hr = random_field((32, 32))
        near = hr.with_data(hr.data + 0.02 * (rng.normal(size=hr.shape) + 1j * rng.normal(size=hr.shape)))
        far = hr.with_data(hr.data + 0.5 * (rng.normal(size=hr.shape) + 1j * rng.normal(size=hr.shape)))
        assert _sweep_l1(near, hr, depths) < _sweep_l1(far, hr, depths)
        hr_a, near_a, far_a = (apodize(f, mode) for f in (hr, near, far))
        assert _sweep_l1(near_a, hr_a, depths) < _sweep_l1(far_a, hr_a, depths)


def _focus_depths(z_peak):
    return np.linspace(0.0, 2 * z_peak, 64)[1:]


@pytest.mark.slow
@pytest.mark.parametrize("fraction", [0.25, 0.5, 0.75])
def test_interpolation_stretches_focus_quadratically(fraction):
    n, s = 64, 2
    z0 = fraction * scene_depth(n, DEFAULT_PITCH)
    lr = point_hologram((n, n), DEFAULT_PITCH, WL, z0)
    holo = HologramRGB.from_array(np.stack([lr.data] * 3), wavelengths=(WL * 1.2, WL, WL * 0.85))
    upsampled = bicubic_upsample(holo, s).channels[1]
    depths = _focus_depths(s * s * z0)
    step = depths[1] - depths[0]
    assert abs(peak_depth(upsampled, depths) - s * s * z0) <= 2 * step

    regenerated = point_hologram((s * n, s * n), DEFAULT_PITCH, WL, s * z0)
    assert abs(peak_depth(regenerated, depths) - s * z0) <= 2 * step
