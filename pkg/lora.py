#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Complex low-rank adapters on the dense-block convolutions.

An adapter adds (alpha / r) * B @ A as a 1x1 complex path over the layer
input, so merging folds it into the kernel's centre tap.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from analysis import volumetric_eval
from cvnn.network import CvRdn
from cvnn.params import ComplexParameter
from cvnn.tape import Tape
from cvnn.tensor_ops import add, cconv2d
from field import ComplexTensor
from holo_errors import ConfigError, DimensionError, DomainError, LifecycleError
from storage import checkpoint as ckpt
from storage.manifest import PairSample
from training import LossConfig, Trainer, TrainSettings, infer

logger = logging.getLogger(__name__)

LORA_PREFIX = 'lora.'


@dataclass
class LoraAdapter:
    """Factor pair for one target convolution."""
    target: str
    rank: int
    alpha: float
    A: ComplexParameter
    B: ComplexParameter
    merged: bool = False

    def __post_init__(self):
        r, in_ch = self.A.shape
        out_ch, r_b = self.B.shape
        if self.rank < 1 or r != self.rank or r_b != self.rank:
            raise DimensionError(f"{self.target}: factor ranks {r}/{r_b} do not match rank {self.rank}")
        if self.rank > min(in_ch, out_ch):
            raise DimensionError(
                f"{self.target}: rank {self.rank} exceeds min(in={in_ch}, out={out_ch})")

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @property
    def in_features(self) -> int:
        return self.A.shape[1]

    @property
    def out_features(self) -> int:
        return self.B.shape[0]

    def delta(self) -> np.ndarray:
        """(out, in) complex update scale * B @ A."""
        return self.scale * (self.B.value() @ self.A.value())

    def apply(self, x: ComplexTensor, tape: Optional[Tape] = None) -> ComplexTensor:
        """scale * B (A x) over channels at every pixel; gradients reach A and B only through the tape."""
        if x.shape[1] != self.in_features:
            raise DimensionError(f"{self.target}: input has {x.shape[1]} channels, adapter expects {self.in_features}")
        a = self.A.value()
        b = self.B.value()
        xc = x.to_complex()
        u = np.einsum('rc,nchw->nrhw', a, xc)
        y = self.scale * np.einsum('or,nrhw->nohw', b, u)
        out = ComplexTensor(y.real.astype(x.dtype), y.imag.astype(x.dtype))
        if tape is not None:
            def backward(gr, gi):
                g = gr + 1j * gi
                gu = self.scale * np.einsum('or,nohw->nrhw', b.conj(), g)
                gb = self.scale * np.einsum('nohw,nrhw->or', g, u.conj())
                ga = np.einsum('nrhw,nchw->rc', gu, xc.conj())
                gx = np.einsum('rc,nrhw->nchw', a.conj(), gu)
                tape.add_param_grad(self.A.name, ga.real, ga.imag)
                tape.add_param_grad(self.B.name, gb.real, gb.imag)
                return [(gx.real.astype(x.dtype), gx.imag.astype(x.dtype))]
            tape.record('lora', backward, [x], out)
        return out

    def to_record(self) -> Dict[str, Any]:
        return {'target': self.target, 'rank': self.rank, 'alpha': self.alpha,
                'A': self.A.value(), 'B': self.B.value()}


def lora_forward(x: ComplexTensor, model: CvRdn, target: str, adapter: LoraAdapter,
                 tape: Optional[Tape] = None) -> ComplexTensor:
    """Base convolution plus the adapter path, for a single layer."""
    return add(cconv2d(x, model.conv_params(target), tape), adapter.apply(x, tape), tape)


def default_targets(model: CvRdn) -> List[str]:
    """Every in-block convolution and every local fusion layer."""
    return [name for name in model.conv_names() if name.startswith('rdb.')]


def inject(model: CvRdn, targets: Optional[Sequence[str]] = None, r: int = 8, alpha: float = 16.0,
           seed: int = 0) -> CvRdn:
    """Freeze the backbone and attach zero-update adapters to ``targets``."""
    if model.config.is_real:
        raise ConfigError("complex adapters need a complex backbone, got a real network")
    targets = list(targets) if targets is not None else default_targets(model)
    known = set(model.conv_names())
    unknown = [t for t in targets if t not in known]
    if unknown:
        raise ConfigError(f"unknown adapter targets {unknown}")
    for p in model.params:
        if not p.name.startswith(LORA_PREFIX):
            p.trainable = False
    rng = np.random.default_rng(seed)
    dtype = model.params['sfe.0.weight'].real.dtype
    for target in targets:
        if target in model.adapters:
            raise LifecycleError(f"{target} already carries an adapter")
        conv = model.conv_params(target)
        in_ch, out_ch = conv.in_channels, conv.out_channels
        if r > min(in_ch, out_ch):
            raise DimensionError(f"{target}: rank {r} exceeds min(in={in_ch}, out={out_ch})")
        bound = np.sqrt(3.0 / in_ch) / np.sqrt(2.0)
        a = model.params.add(f'{LORA_PREFIX}{target}.A',
                             rng.uniform(-bound, bound, size=(r, in_ch)).astype(dtype),
                             rng.uniform(-bound, bound, size=(r, in_ch)).astype(dtype))
        b = model.params.add(f'{LORA_PREFIX}{target}.B',
                             np.zeros((out_ch, r), dtype=dtype), np.zeros((out_ch, r), dtype=dtype))
        model.adapters[target] = LoraAdapter(target, r, float(alpha), a, b)
    logger.info(f"injected rank-{r} adapters (alpha {alpha}) into {len(targets)} layers")
    return model


def _drop_adapters(model: CvRdn):
    for target, adapter in list(model.adapters.items()):
        model.params.remove(adapter.A.name)
        model.params.remove(adapter.B.name)
    model.adapters.clear()


def merge(model: CvRdn) -> CvRdn:
    """Fold every adapter into its kernel's centre tap and remove the adapters."""
    if not model.adapters:
        raise LifecycleError("no adapters to merge (never injected or already merged)")
    for target, adapter in model.adapters.items():
        if adapter.merged:
            raise LifecycleError(f"{target}: adapter already merged")
        weight = model.conv_params(target).weight
        kh, kw = weight.shape[2:]
        delta = adapter.delta()
        weight.real[:, :, kh // 2, kw // 2] += delta.real
        weight.imag[:, :, kh // 2, kw // 2] += delta.imag
        adapter.merged = True
    _drop_adapters(model)
    for p in model.params:
        p.trainable = True
    return model


def trainable_count(model: CvRdn) -> int:
    return model.params.count(trainable_only=True)


def backbone_count(model: CvRdn) -> int:
    return sum(2 * p.size for p in model.params if not p.name.startswith(LORA_PREFIX))


def backbone_hash(model: CvRdn) -> str:
    return model.params.state_hash(exclude=LORA_PREFIX)


def save_adapters(path, model: CvRdn):
    ckpt.save_adapters(path, [a.to_record() for a in model.adapters.values()])


def load_adapters(path, model: CvRdn) -> CvRdn:
    """Re-attach adapters from a CVL1 file to a backbone."""
    records = ckpt.load_adapters_file(path)
    for rec in records:
        inject(model, [rec['target']], r=rec['rank'], alpha=rec['alpha'])
        adapter = model.adapters[rec['target']]
        if adapter.A.shape != rec['A'].shape or adapter.B.shape != rec['B'].shape:
            raise DimensionError(f"{rec['target']}: stored factors do not fit this backbone")
        dtype = adapter.A.real.dtype
        adapter.A.real[...] = rec['A'].real.astype(dtype)
        adapter.A.imag[...] = rec['A'].imag.astype(dtype)
        adapter.B.real[...] = rec['B'].real.astype(dtype)
        adapter.B.imag[...] = rec['B'].imag.astype(dtype)
    return model


# ---------------------------------------------------------------- adaptation

@dataclass
class AdaptReport:
    """Frozen-vs-adapted validation quality of one adaptation run."""
    n_samples: int
    rank: int
    alpha: float
    frozen_psnr: float
    adapted_psnr: float
    trainable: int
    backbone: int
    backbone_intact: bool
    history: List[Dict[str, Any]] = field(default_factory=list, repr=False)

    @property
    def trainable_ratio(self) -> float:
        return self.trainable / self.backbone if self.backbone else 0.0

    @property
    def gain_db(self) -> float:
        return self.adapted_psnr - self.frozen_psnr

    def to_dict(self) -> Dict[str, Any]:
        return {'n_samples': self.n_samples, 'rank': self.rank, 'alpha': self.alpha,
                'frozen_psnr_db': self.frozen_psnr, 'adapted_psnr_db': self.adapted_psnr,
                'gain_db': self.gain_db, 'trainable_params': self.trainable,
                'backbone_params': self.backbone, 'trainable_ratio': self.trainable_ratio,
                'backbone_intact': self.backbone_intact}


def plane_averaged_psnr(model: CvRdn, samples: Sequence[PairSample], n_planes: int = 8,
                        workers: int = 1) -> float:
    """Mean over samples of the plane-averaged PSNR of full-frame network outputs."""
    if not samples:
        return float('nan')
    scores = []
    for sample in samples:
        pred = infer(model, sample.lr)
        metrics = volumetric_eval(pred, sample.hr, n_planes=n_planes,
                                  z_max=sample.entry.depth_max_hr_m, workers=workers)
        scores.append(metrics.mean_psnr)
    return float(np.mean(scores))


def check_new_depth_range(model: CvRdn, samples: Sequence[PairSample]) -> float:
    """HR depth range of ``samples``; DomainError if it equals the backbone's training range."""
    depth_max = max(float(s.entry.depth_max_hr_m) for s in samples)
    base = model.depth_max_hr
    if base is not None and math.isclose(depth_max, base, rel_tol=1e-9, abs_tol=1e-15):
        raise DomainError(f"adaptation depth range {depth_max:.6g} m equals the pre-training range; "
                          f"adapters are for a new depth range")
    return depth_max


def adapt(model: CvRdn, train_samples: Sequence[PairSample], val_samples: Sequence[PairSample],
          settings: TrainSettings, loss_cfg: LossConfig, n_samples: int = 50, r: int = 8, alpha: float = 16.0,
          targets: Optional[Sequence[str]] = None, eval_planes: int = 8,
          show_progress: bool = False) -> AdaptReport:
    """Fit adapters on ``n_samples`` pairs from a new depth range, backbone frozen.

    The subset is drawn with the training seed. The backbone hash is checked
    after the run; zero epochs leaves the model numerically unchanged. A
    backbone that knows its training depth range refuses data from the same
    range.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be positive, got {n_samples}")
    if not train_samples:
        raise ConfigError("adaptation set is empty")
    check_new_depth_range(model, train_samples)
    rng = np.random.default_rng(np.random.SeedSequence([settings.seed, n_samples]))
    picked = sorted(rng.permutation(len(train_samples))[:min(n_samples, len(train_samples))])
    subset = [train_samples[int(i)] for i in picked]

    frozen = plane_averaged_psnr(model, val_samples, eval_planes, settings.workers)
    if not model.adapters:
        inject(model, targets, r=r, alpha=alpha, seed=settings.seed)
    before = backbone_hash(model)
    trainer = Trainer(model, loss_cfg, settings, show_progress=show_progress)
    trainer.train(subset, val_samples)
    intact = backbone_hash(model) == before
    if not intact:
        logger.error("backbone parameters changed during adaptation")
    adapted = plane_averaged_psnr(model, val_samples, eval_planes, settings.workers)
    report = AdaptReport(len(subset), r, float(alpha), frozen, adapted,
                         trainable_count(model), backbone_count(model), intact, trainer.history)
    logger.info(f"adapted on {report.n_samples} samples: {frozen:.3f} -> {adapted:.3f} dB, "
                f"trainable ratio {report.trainable_ratio:.4f}")
    return report
