#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Complex layers in planar layout with analytic backward passes.

Every op takes an optional Tape; when given, the op records a closure that
maps the output gradient (dL/dRe, dL/dIm) to input gradients.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cvnn.params import ComplexParameter
from cvnn.tape import Tape
from field import ComplexTensor
from holo_errors import DimensionError


@dataclass
class CConvParams:
    """Complex kernel (out, in, kh, kw) with optional per-channel complex bias."""
    weight: ComplexParameter
    bias: Optional[ComplexParameter] = None

    def __post_init__(self):
        shape = self.weight.shape
        if len(shape) != 4:
            raise DimensionError(f"{self.weight.name}: kernel must be rank 4, got {shape}")
        if shape[2] % 2 == 0 or shape[3] % 2 == 0:
            raise DimensionError(f"{self.weight.name}: kernel spatial dims must be odd, got {shape[2:]}")
        if self.bias is not None and self.bias.shape != (shape[0],):
            raise DimensionError(f"{self.bias.name}: bias shape {self.bias.shape} != ({shape[0]},)")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]


def _windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(N, C, H, W, kh, kw) view of the zero-padded input."""
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(padded, (kh, kw), axis=(2, 3))


def conv2d_real(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1 'same' cross-correlation, x (N, Cin, H, W), w (Cout, Cin, kh, kw)."""
    win = _windows(x, w.shape[2], w.shape[3])
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv2d_real_input_grad(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Adjoint of conv2d_real with respect to its input."""
    flipped = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return conv2d_real(g, np.ascontiguousarray(flipped))


def conv2d_real_weight_grad(g: np.ndarray, x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """dL/dw for y = conv2d_real(x, w) given g = dL/dy."""
    win = _windows(x, kh, kw)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def cconv2d(x: ComplexTensor, p: CConvParams, tape: Optional[Tape] = None) -> ComplexTensor:
    """Complex convolution from four real convolutions.

    Y_r = X_r*W_r - X_i*W_i and Y_i = X_r*W_i + X_i*W_r, plus bias.
    """
    if x.shape[1] != p.in_channels:
        raise DimensionError(
            f"{p.weight.name}: input has {x.shape[1]} channels, kernel expects {p.in_channels}")
    wr, wi = p.weight.real, p.weight.imag
    kh, kw = wr.shape[2:]
    yr = conv2d_real(x.real, wr) - conv2d_real(x.imag, wi)
    yi = conv2d_real(x.real, wi) + conv2d_real(x.imag, wr)
    if p.bias is not None:
        yr += p.bias.real[None, :, None, None]
        yi += p.bias.imag[None, :, None, None]
    out = ComplexTensor(yr, yi)
    if tape is not None:
        def backward(gr, gi):
            gxr = conv2d_real_input_grad(gr, wr) + conv2d_real_input_grad(gi, wi)
            gxi = conv2d_real_input_grad(gi, wr) - conv2d_real_input_grad(gr, wi)
            gwr = conv2d_real_weight_grad(gr, x.real, kh, kw) + conv2d_real_weight_grad(gi, x.imag, kh, kw)
            gwi = conv2d_real_weight_grad(gi, x.real, kh, kw) - conv2d_real_weight_grad(gr, x.imag, kh, kw)
            tape.add_param_grad(p.weight.name, gwr, gwi)
            if p.bias is not None:
                tape.add_param_grad(p.bias.name, gr.sum(axis=(0, 2, 3)), gi.sum(axis=(0, 2, 3)))
            return [(gxr, gxi)]
        tape.record('cconv2d', backward, [x], out)
    return out


def rconv2d(x: ComplexTensor, p: CConvParams, tape: Optional[Tape] = None) -> ComplexTensor:
    """Real convolution of the real plane; the imaginary kernel and plane are ignored."""
    if x.shape[1] != p.in_channels:
        raise DimensionError(
            f"{p.weight.name}: input has {x.shape[1]} channels, kernel expects {p.in_channels}")
    wr = p.weight.real
    kh, kw = wr.shape[2:]
    yr = conv2d_real(x.real, wr)
    if p.bias is not None:
        yr += p.bias.real[None, :, None, None]
    out = ComplexTensor(yr, np.zeros_like(yr))
    if tape is not None:
        def backward(gr, gi):
            gw = conv2d_real_weight_grad(gr, x.real, kh, kw)
            tape.add_param_grad(p.weight.name, gw, np.zeros_like(gw))
            if p.bias is not None:
                gb = gr.sum(axis=(0, 2, 3))
                tape.add_param_grad(p.bias.name, gb, np.zeros_like(gb))
            return [(conv2d_real_input_grad(gr, wr), np.zeros_like(x.imag))]
        tape.record('rconv2d', backward, [x], out)
    return out


def split_planes(x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
    """(N, C) complex -> (N, 2C) real channels [Re..., Im...] with a zero imaginary plane."""
    c = x.shape[1]
    stacked = np.concatenate([x.real, x.imag], axis=1)
    out = ComplexTensor(stacked, np.zeros_like(stacked))
    if tape is not None:
        def backward(gr, gi):
            return [(gr[:, :c], gr[:, c:])]
        tape.record('split_planes', backward, [x], out)
    return out


def merge_planes(x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
    """Inverse of split_planes: (N, 2C) real channels -> (N, C) complex."""
    if x.shape[1] % 2:
        raise DimensionError(f"cannot merge an odd channel count {x.shape[1]}")
    c = x.shape[1] // 2
    out = ComplexTensor(np.ascontiguousarray(x.real[:, :c]), np.ascontiguousarray(x.real[:, c:]))
    if tape is not None:
        def backward(gr, gi):
            return [(np.concatenate([gr, gi], axis=1), np.zeros_like(x.imag))]
        tape.record('merge_planes', backward, [x], out)
    return out


def crelu(x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
    """ReLU applied to the real and imaginary parts independently."""
    mask_r = x.real > 0
    mask_i = x.imag > 0
    out = ComplexTensor(np.where(mask_r, x.real, 0.0).astype(x.dtype),
                        np.where(mask_i, x.imag, 0.0).astype(x.dtype))
    if tape is not None:
        def backward(gr, gi):
            return [(gr * mask_r, gi * mask_i)]
        tape.record('crelu', backward, [x], out)
    return out


def _shuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = a.shape
    a = a.reshape(n, c // (s * s), s, s, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(a.reshape(n, c // (s * s), h * s, w * s))


def _unshuffle(a: np.ndarray, s: int) -> np.ndarray:
    n, c, h, w = a.shape
    a = a.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(a.reshape(n, c * s * s, h // s, w // s))


def complex_pixel_shuffle(x: ComplexTensor, s: int, tape: Optional[Tape] = None) -> ComplexTensor:
    """(N, s^2 C, H, W) -> (N, C, sH, sW), row-major sub-pixel order, same map on both parts."""
    if x.shape[1] % (s * s):
        raise DimensionError(f"{x.shape[1]} channels not divisible by {s}^2")
    out = ComplexTensor(_shuffle(x.real, s), _shuffle(x.imag, s))
    if tape is not None:
        def backward(gr, gi):
            return [(_unshuffle(gr, s), _unshuffle(gi, s))]
        tape.record('pixel_shuffle', backward, [x], out)
    return out


def complex_pixel_unshuffle(x: ComplexTensor, s: int, tape: Optional[Tape] = None) -> ComplexTensor:
    if x.shape[2] % s or x.shape[3] % s:
        raise DimensionError(f"spatial shape {x.shape[2:]} not divisible by {s}")
    out = ComplexTensor(_unshuffle(x.real, s), _unshuffle(x.imag, s))
    if tape is not None:
        def backward(gr, gi):
            return [(_shuffle(gr, s), _shuffle(gi, s))]
        tape.record('pixel_unshuffle', backward, [x], out)
    return out


def concat(tensors: Sequence[ComplexTensor], tape: Optional[Tape] = None) -> ComplexTensor:
    """Channel concatenation."""
    out = ComplexTensor(np.concatenate([t.real for t in tensors], axis=1),
                        np.concatenate([t.imag for t in tensors], axis=1))
    if tape is not None:
        bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

        def backward(gr, gi):
            return [(gr[:, a:b], gi[:, a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        tape.record('concat', backward, list(tensors), out)
    return out


def add(a: ComplexTensor, b: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
    if a.shape != b.shape:
        raise DimensionError(f"cannot add {a.shape} and {b.shape}")
    out = ComplexTensor(a.real + b.real, a.imag + b.imag)
    if tape is not None:
        def backward(gr, gi):
            return [(gr, gi), (gr, gi)]
        tape.record('add', backward, [a, b], out)
    return out


def direct_cconv2d(x: np.ndarray, w: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Reference complex convolution by explicit complex arithmetic loops over taps."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    y = np.zeros((n, cout, h, wd), dtype=np.complex128)
    for i in range(kh):
        for j in range(kw):
            patch = padded[:, :, i:i + h, j:j + wd]
            y += np.einsum('nchw,oc->nohw', patch, w[:, :, i, j])
    if bias is not None:
        y += bias[None, :, None, None]
    return y


def init_kernel(rng: np.random.Generator, out_ch: int, in_ch: int, k: int,
                dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
    """Fan-in uniform init with gain 1/sqrt(2) on each of the real and imaginary kernels."""
    fan_in = in_ch * k * k
    bound = np.sqrt(3.0 / fan_in) / np.sqrt(2.0)
    shape = (out_ch, in_ch, k, k)
    real = rng.uniform(-bound, bound, size=shape).astype(dtype)
    imag = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return real, imag


def init_real_kernel(rng: np.random.Generator, out_ch: int, in_ch: int, k: int,
                     dtype=np.float64) -> Tuple[np.ndarray, np.ndarray]:
    """Fan-in uniform real kernel; the imaginary buffer is zero and stays zero under training."""
    fan_in = in_ch * k * k
    bound = np.sqrt(3.0 / fan_in)
    real = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(dtype)
    return real, np.zeros_like(real)
