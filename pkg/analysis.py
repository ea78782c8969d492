#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Image quality metrics, volumetric evaluation and focus-depth diagnostics."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.signal import convolve2d

from field import ComplexField, HologramRGB
from holo_errors import DimensionError, DomainError
from propagation import (DEFAULT_CONFIG, PropagationConfig, propagate, reconstruct_stack,
                         scene_depth)
from resample import CalibrationRule, calibrated_distance

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
FOCUS_WAVELENGTH = 532e-9

Region = Tuple[int, int, int, int]  # x0, y0, w, h


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr inputs differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10 * np.log10(peak ** 2 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_stats(a: np.ndarray, b: np.ndarray, data_range: float):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"ssim expects two equal 2-D images, got {a.shape} and {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise DomainError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window()

    def filt(x):
        return convolve2d(x, win, mode='valid')

    mu_a, mu_b = filt(a), filt(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = filt(a * a) - mu_aa
    var_b = filt(b * b) - mu_bb
    cov = filt(a * b) - mu_ab
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return mu_aa, mu_bb, mu_ab, var_a, var_b, cov, c1, c2


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Single-scale SSIM, Gaussian 11x11 window (sigma 1.5), mean over valid positions."""
    mu_aa, mu_bb, mu_ab, var_a, var_b, cov, c1, c2 = _ssim_stats(a, b, data_range)
    smap = ((2 * mu_ab + c1) * (2 * cov + c2)) / ((mu_aa + mu_bb + c1) * (var_a + var_b + c2))
    return float(np.mean(smap))


def ssim_terms(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> Dict[str, float]:
    """Mean luminance, contrast and structure factors (C3 = C2 / 2)."""
    mu_aa, mu_bb, mu_ab, var_a, var_b, cov, c1, c2 = _ssim_stats(a, b, data_range)
    sd_a = np.sqrt(np.maximum(var_a, 0))
    sd_b = np.sqrt(np.maximum(var_b, 0))
    c3 = c2 / 2
    return {
        'luminance': float(np.mean((2 * mu_ab + c1) / (mu_aa + mu_bb + c1))),
        'contrast': float(np.mean((2 * sd_a * sd_b + c2) / (var_a + var_b + c2))),
        'structure': float(np.mean((cov + c3) / (sd_a * sd_b + c3))),
    }


@dataclass
class PlaneMetrics:
    """Per-plane PSNR/SSIM with plane averages."""
    z: List[float] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float('nan')

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float('nan')

    def rows(self) -> List[Dict[str, float]]:
        rows = [{'plane': i, 'z_m': z, 'psnr_db': p, 'ssim': s}
                for i, (z, p, s) in enumerate(zip(self.z, self.psnr, self.ssim))]
        rows.append({'plane': 'mean', 'z_m': '', 'psnr_db': self.mean_psnr, 'ssim': self.mean_ssim})
        return rows


def sweep_stacks(pred: HologramRGB, gt: HologramRGB, n_planes: int = 40,
                 z_max: Optional[float] = None, calibration: Optional[CalibrationRule] = None,
                 config: PropagationConfig = DEFAULT_CONFIG,
                 workers: int = 1) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(depths, prediction stack, ground-truth stack) on one ground-truth-peak normalization.

    Prediction amplitudes are clipped to [0, 1]. A calibration rule remaps the
    distances at which the prediction is reconstructed.
    """
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if z_max is None:
        z_max = scene_depth(max(gt.shape), gt.pitch)
    depths = np.linspace(0.0, abs(z_max), n_planes)
    scale = calibration.scale if calibration is not None else 1.0
    pred_z = [-calibrated_distance(z, scale, calibration) for z in depths]
    gt_stack = reconstruct_stack(gt, -depths, config, workers)
    pred_stack = reconstruct_stack(pred, pred_z, config, workers)
    peak = float(gt_stack.max()) or 1.0
    return depths, np.clip(pred_stack / peak, 0.0, 1.0), gt_stack / peak


def volumetric_eval(pred: HologramRGB, gt: HologramRGB, n_planes: int = 40,
                    z_max: Optional[float] = None, calibration: Optional[CalibrationRule] = None,
                    config: PropagationConfig = DEFAULT_CONFIG, workers: int = 1) -> PlaneMetrics:
    """PSNR/SSIM of reconstructed amplitudes over uniformly spaced depths in [0, z_max]."""
    depths, pred_stack, gt_stack = sweep_stacks(pred, gt, n_planes, z_max, calibration, config, workers)
    metrics = PlaneMetrics()
    for i, z in enumerate(depths):
        metrics.z.append(float(z))
        metrics.psnr.append(psnr(pred_stack[i], gt_stack[i]))
        metrics.ssim.append(float(np.mean([ssim(pred_stack[i, c], gt_stack[i, c]) for c in range(3)])))
    logger.info(f"volumetric eval over {n_planes} planes: {metrics.mean_psnr:.3f} dB, SSIM {metrics.mean_ssim:.4f}")
    return metrics


def sobel_edges(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude from the 3x3 Sobel pair with replicated borders."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"sobel_edges expects a single-channel image, got {img.shape}")
    gx = ndimage.sobel(img, axis=1, mode='nearest')
    gy = ndimage.sobel(img, axis=0, mode='nearest')
    return np.hypot(gx, gy)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"ncc inputs differ: {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    sa, sb = np.sqrt(np.mean(a * a)), np.sqrt(np.mean(b * b))
    if sa == 0 or sb == 0:
        raise DomainError("correlation undefined for a zero-variance input")
    return float(np.clip(np.mean(a * b) / (sa * sb), -1.0, 1.0))


@dataclass
class FocusCurve:
    depths: np.ndarray
    scores: np.ndarray
    z_hat: float
    k: int

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.scores))


FieldInput = Union[ComplexField, HologramRGB, Sequence[ComplexField], np.ndarray]


def average_field(source: FieldInput, pitch: Optional[float] = None,
                  wavelength: float = FOCUS_WAVELENGTH) -> ComplexField:
    """Collapse a hologram or a stack of complex feature maps to one field."""
    if isinstance(source, ComplexField):
        return source
    if isinstance(source, HologramRGB):
        return ComplexField(source.as_array().mean(axis=0), source.pitch, wavelength)
    if isinstance(source, np.ndarray):
        if pitch is None:
            raise DomainError("a pitch is required for bare feature arrays")
        data = source if source.ndim == 2 else source.reshape(-1, *source.shape[-2:]).mean(axis=0)
        return ComplexField(data, pitch, wavelength)
    fields = list(source)
    return ComplexField(np.mean([f.data for f in fields], axis=0), fields[0].pitch, wavelength)


def _crop(img: np.ndarray, region: Optional[Region]) -> np.ndarray:
    if region is None:
        return img
    x0, y0, w, h = region
    return img[y0:y0 + h, x0:x0 + w]


def _focus_fields(source: FieldInput, pitch: Optional[float], wavelength: float) -> List[ComplexField]:
    # RGB channels keep their own wavelength; averaging them into one field blurs the focus
    if isinstance(source, HologramRGB):
        return list(source)
    return [average_field(source, pitch, wavelength)]


def estimate_focus(source: FieldInput, ref_edges: np.ndarray, depths: Sequence[float], k: int = 3,
                   region: Optional[Region] = None, pitch: Optional[float] = None,
                   wavelength: float = FOCUS_WAVELENGTH,
                   config: PropagationConfig = DEFAULT_CONFIG) -> FocusCurve:
    """Depth whose reconstructed edge map best correlates with a reference edge map.

    Each depth is reconstructed by propagating -z; the estimate is the mean
    depth of the k best NCC scores. An RGB hologram is scored per channel at
    that channel's wavelength and the channel scores are averaged.
    """
    depths = np.asarray(depths, dtype=np.float64)
    if depths.size == 0:
        raise DomainError("depth grid must not be empty")
    if not 1 <= k <= depths.size:
        raise DomainError(f"k must lie in [1, {depths.size}], got {k}")
    fields = _focus_fields(source, pitch, wavelength)
    ref = np.asarray(ref_edges, dtype=np.float64)
    scores = np.empty(depths.size)
    for i, z in enumerate(depths):
        per_field = []
        for fld in fields:
            amp = _crop(np.abs(propagate(fld, -z, config).data), region)
            if amp.shape != ref.shape:
                raise DimensionError(f"reference edges {ref.shape} do not match reconstruction {amp.shape}")
            per_field.append(ncc(sobel_edges(amp), ref))
        scores[i] = float(np.mean(per_field))
    top = np.argsort(-scores, kind='stable')[:k]
    return FocusCurve(depths, scores, float(np.mean(depths[top])), k)


def focus_sweep(fld: ComplexField, depths: Sequence[float],
                config: PropagationConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Peak-to-mean intensity ratio of the reconstruction at each depth."""
    out = []
    for z in depths:
        intensity = propagate(fld, -float(z), config).intensity()
        mean = float(intensity.mean())
        out.append(float(intensity.max()) / mean if mean > 0 else 0.0)
    return np.asarray(out)


def peak_depth(fld: ComplexField, depths: Sequence[float],
               config: PropagationConfig = DEFAULT_CONFIG) -> float:
    depths = np.asarray(depths, dtype=np.float64)
    return float(depths[int(np.argmax(focus_sweep(fld, depths, config)))])
