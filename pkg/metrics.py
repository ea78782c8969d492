#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Perceptual distances between reconstructed amplitude images.

Each metric compares a reference image with a candidate over the last two
axes (leading axes are averaged) and returns the gradient with respect to
the candidate, which the reconstruction loss pulls back through the optics.
"""
from abc import ABC, abstractmethod
from typing import Callable, Dict, Tuple, Type

import numpy as np

from holo_errors import ConfigError, DimensionError


class PerceptualMetric(ABC):
    """Base class for registered image distances."""

    name = 'base'

    def distance(self, ref: np.ndarray, x: np.ndarray) -> float:
        return self.value_and_grad(ref, x)[0]

    @abstractmethod
    def value_and_grad(self, ref: np.ndarray, x: np.ndarray) -> Tuple[float, np.ndarray]:
        """Distance and its gradient with respect to ``x``."""
        pass

    @staticmethod
    def _check(ref: np.ndarray, x: np.ndarray):
        if ref.shape != x.shape:
            raise DimensionError(f"metric inputs differ in shape: {ref.shape} vs {x.shape}")


class L1Amplitude(PerceptualMetric):
    """Mean absolute amplitude difference."""

    name = 'l1_amplitude'

    def value_and_grad(self, ref, x):
        self._check(ref, x)
        diff = x - ref
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def _avg_pool(a: np.ndarray) -> np.ndarray:
    h, w = (a.shape[-2] // 2) * 2, (a.shape[-1] // 2) * 2
    a = a[..., :h, :w]
    return 0.25 * (a[..., 0::2, 0::2] + a[..., 1::2, 0::2] + a[..., 0::2, 1::2] + a[..., 1::2, 1::2])


def _avg_pool_adjoint(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape, dtype=g.dtype)
    h, w = g.shape[-2] * 2, g.shape[-1] * 2
    for dy in (0, 1):
        for dx in (0, 1):
            out[..., dy:h:2, dx:w:2] += 0.25 * g
    return out


class MultiscaleGradient(PerceptualMetric):
    """Sum over dyadic scales of mean |grad a - grad b| with forward differences.

    Offsets cancel, so the distance sees structure only.
    """

    name = 'multiscale_gradient'

    def __init__(self, n_scales: int = 3):
        if n_scales < 1:
            raise ConfigError(f"n_scales must be >= 1, got {n_scales}")
        self.n_scales = n_scales

    def value_and_grad(self, ref, x):
        self._check(ref, x)
        levels = [x - ref]
        for _ in range(self.n_scales - 1):
            if min(levels[-1].shape[-2:]) < 4:
                break
            levels.append(_avg_pool(levels[-1]))

        value = 0.0
        level_grads = []
        for d in levels:
            g = np.zeros_like(d)
            if d.shape[-1] > 1:
                dx = d[..., 1:] - d[..., :-1]
                value += float(np.mean(np.abs(dx)))
                s = np.sign(dx) / dx.size
                g[..., 1:] += s
                g[..., :-1] -= s
            if d.shape[-2] > 1:
                dy = d[..., 1:, :] - d[..., :-1, :]
                value += float(np.mean(np.abs(dy)))
                s = np.sign(dy) / dy.size
                g[..., 1:, :] += s
                g[..., :-1, :] -= s
            level_grads.append(g)

        # pull coarse-level gradients back to full resolution
        grad = level_grads[-1]
        for i in range(len(levels) - 2, -1, -1):
            grad = level_grads[i] + _avg_pool_adjoint(grad, levels[i].shape)
        return value, grad


class ExternalMetric(PerceptualMetric):
    """Wraps a callable returning (value, gradient w.r.t. x), e.g. a learned metric."""

    name = 'external'

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]],
                 name: str = 'external'):
        self.fn = fn
        self.name = name

    def value_and_grad(self, ref, x):
        self._check(ref, x)
        value, grad = self.fn(ref, x)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != x.shape:
            raise DimensionError(f"{self.name}: gradient {grad.shape} != input {x.shape}")
        return float(value), grad


class MetricFactory:
    """Registry of perceptual metrics by name."""

    _registry: Dict[str, Type[PerceptualMetric]] = {
        'l1_amplitude': L1Amplitude,
        'multiscale_gradient': MultiscaleGradient,
    }

    @classmethod
    def create(cls, name: str, **kwargs) -> PerceptualMetric:
        metric_class = cls._registry.get(name)
        if metric_class is None:
            raise ConfigError(f"unknown perceptual metric {name!r}; available: {cls.available()}")
        return metric_class(**kwargs)

    @classmethod
    def register(cls, name: str, metric_class: Type[PerceptualMetric]):
        cls._registry[name] = metric_class

    @classmethod
    def available(cls):
        return sorted(cls._registry)
