#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Losses, AdamW, cosine schedule and the patch-based training loop."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.progress import BarColumn, Progress, TextColumn, TimeRemainingColumn

from cvnn.network import CvRdn, CvRdnConfig, build_model
from cvnn.params import ParamStore
from cvnn.tape import Tape
from field import DEFAULT_PITCH, WAVELENGTHS_RGB, ComplexTensor, HologramRGB
from holo_errors import ConfigError, DimensionError, DomainError, HoloError, RangeError, StageError
from metrics import MetricFactory, PerceptualMetric
from propagation import DEFAULT_CONFIG, PropagationConfig, propagate_array
from storage import checkpoint as ckpt
from storage.images import write_csv
from storage.manifest import Manifest, PairSample

logger = logging.getLogger(__name__)

VALIDATION_STREAM = 1_000_003


@dataclass(frozen=True)
class LossConfig:
    """Weight of the reconstruction term, planes per step and perceptual metric."""
    lam: float = 1.0
    n_planes: int = 4
    metric: str = 'multiscale_gradient'
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.n_planes < 1:
            raise ConfigError(f"n_planes must be >= 1, got {self.n_planes}")
        if self.metric not in MetricFactory.available():
            raise ConfigError(f"unknown perceptual metric {self.metric!r}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LossConfig':
        data = dict(data)
        if 'lambda' in data:
            data['lam'] = data.pop('lambda')
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})

    def to_dict(self) -> Dict[str, Any]:
        return {'lambda': self.lam, 'n_planes': self.n_planes, 'metric': self.metric, 'seed': self.seed}


@dataclass
class PatchSample:
    """Aligned LR/HR windows and the HR depth interval they cover."""
    lr: ComplexTensor
    hr: ComplexTensor
    z_min: float
    z_max: float
    sample_id: str = ''
    pitch: float = DEFAULT_PITCH
    wavelengths: Tuple[float, float, float] = WAVELENGTHS_RGB

    def __post_init__(self):
        if self.z_min > self.z_max:
            raise RangeError(f"sample {self.sample_id}: z_min {self.z_min} > z_max {self.z_max}")


@dataclass
class OptState:
    """AdamW moments keyed by parameter name."""
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-5
    eps: float = 1e-8
    step: int = 0
    moments: Dict[str, List[np.ndarray]] = field(default_factory=dict)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name, (mr, mi, vr, vi) in self.moments.items():
            arrays[f"m:{name}:real"], arrays[f"m:{name}:imag"] = mr, mi
            arrays[f"v:{name}:real"], arrays[f"v:{name}:imag"] = vr, vi
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        self.moments = {}
        for key in arrays:
            if key.startswith('m:') and key.endswith(':real'):
                name = key[2:-5]
                self.moments[name] = [arrays[f"m:{name}:real"].copy(), arrays[f"m:{name}:imag"].copy(),
                                      arrays[f"v:{name}:real"].copy(), arrays[f"v:{name}:imag"].copy()]


# ---------------------------------------------------------------- losses

def data_fidelity_loss(pred: ComplexTensor, gt: ComplexTensor) -> Tuple[float, ComplexTensor]:
    """Half the sum of the mean absolute errors of the real and imaginary parts."""
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and target {gt.shape} differ")
    dr = pred.real - gt.real
    di = pred.imag - gt.imag
    n = dr.size
    value = 0.5 * (float(np.mean(np.abs(dr))) + float(np.mean(np.abs(di))))
    grad = ComplexTensor(np.sign(dr) / (2 * n), np.sign(di) / (2 * n))
    return value, grad


def sample_planes(z_min: float, z_max: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform draw per equal sub-interval of [z_min, z_max]."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if z_min > z_max:
        raise RangeError(f"z_min {z_min} > z_max {z_max}")
    dz = (z_max - z_min) / n
    u = rng.uniform(0.0, 1.0, size=n)
    return z_min + (np.arange(n) + u) * dz


def _propagate_batch(data: np.ndarray, z: float, pitch: float, wavelengths: Sequence[float],
                     config: PropagationConfig) -> np.ndarray:
    """Propagate a (B, 3, H, W) complex array channel by channel."""
    out = np.empty(data.shape, dtype=np.complex128)
    for b in range(data.shape[0]):
        for c in range(data.shape[1]):
            out[b, c] = propagate_array(data[b, c], pitch, wavelengths[c], z, config)
    return out


def recon_loss(pred: ComplexTensor, gt: ComplexTensor, depths: Sequence[float],
               metric: PerceptualMetric, pitch: float = DEFAULT_PITCH,
               wavelengths: Sequence[float] = WAVELENGTHS_RGB,
               config: PropagationConfig = DEFAULT_CONFIG) -> Tuple[float, ComplexTensor]:
    """Mean perceptual distance between reconstructed amplitudes at the given depths.

    Each depth z is reconstructed by propagating -z. Amplitudes of both stacks
    are divided by the ground-truth stack maximum of each batch item. The
    gradient comes back through |U| and the adjoint propagation (+z).
    """
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and target {gt.shape} differ")
    depths = [float(z) for z in depths]
    if not depths:
        raise DomainError("recon_loss needs at least one plane")
    pred_c = pred.to_complex().astype(np.complex128)
    gt_c = gt.to_complex().astype(np.complex128)
    u_pred = [_propagate_batch(pred_c, -z, pitch, wavelengths, config) for z in depths]
    a_gt = [np.abs(_propagate_batch(gt_c, -z, pitch, wavelengths, config)) for z in depths]

    peak = np.max(np.stack(a_gt), axis=(0, 2, 3, 4))
    peak = np.where(peak > 0, peak, 1.0)[:, None, None, None]

    n = len(depths)
    value = 0.0
    grad = np.zeros(pred_c.shape, dtype=np.complex128)
    for z, u, ag in zip(depths, u_pred, a_gt):
        amp = np.abs(u)
        v, g_amp = metric.value_and_grad(ag / peak, amp / peak)
        value += v / n
        g_amp = g_amp / (n * peak)
        safe = np.where(amp > 0, amp, 1.0)
        g_u = np.where(amp > 0, g_amp * u / safe, 0.0)
        grad += _propagate_batch(g_u, z, pitch, wavelengths, config)
    return value, ComplexTensor(grad.real.astype(pred.dtype), grad.imag.astype(pred.dtype))


def total_loss(pred: ComplexTensor, gt: ComplexTensor, patch: PatchSample, cfg: LossConfig,
               rng: np.random.Generator, metric: Optional[PerceptualMetric] = None,
               config: PropagationConfig = DEFAULT_CONFIG) -> Tuple[float, ComplexTensor, Dict[str, float]]:
    """data + lambda * recon, with planes stratified over the patch depth interval."""
    data_value, grad = data_fidelity_loss(pred, gt)
    terms = {'data': data_value, 'recon': 0.0}
    depths = sample_planes(patch.z_min, patch.z_max, cfg.n_planes, rng)
    if cfg.lam > 0:
        metric = metric or MetricFactory.create(cfg.metric)
        recon_value, recon_grad = recon_loss(pred, gt, depths, metric, patch.pitch,
                                             patch.wavelengths, config)
        terms['recon'] = recon_value
        grad = ComplexTensor(grad.real + cfg.lam * recon_grad.real, grad.imag + cfg.lam * recon_grad.imag)
    terms['total'] = data_value + cfg.lam * terms['recon']
    return terms['total'], grad, terms


# ---------------------------------------------------------------- optimizer

def adamw_step(store: ParamStore, state: OptState, lr: Optional[float] = None):
    """Decoupled weight decay Adam with bias correction; real and imaginary parts independent."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for p in store.trainable():
        if p.name not in state.moments:
            state.moments[p.name] = [np.zeros_like(p.real), np.zeros_like(p.imag),
                                     np.zeros_like(p.real), np.zeros_like(p.imag)]
        m_r, m_i, v_r, v_i = state.moments[p.name]
        for value, grad, m, v in ((p.real, p.grad_real, m_r, v_r), (p.imag, p.grad_imag, m_i, v_i)):
            value *= 1 - lr * state.weight_decay
            m *= state.beta1
            m += (1 - state.beta1) * grad
            v *= state.beta2
            v += (1 - state.beta2) * grad * grad
            value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        return lr0
    step = min(max(step, 0), total_steps)
    return max(0.0, lr0 * (1 + math.cos(math.pi * step / total_steps)) / 2)


# ---------------------------------------------------------------- patches

def sample_patch(sample: PairSample, rng: Optional[np.random.Generator], crop_lr: int = 64,
                 center: bool = False, dtype=np.float64) -> PatchSample:
    """Aligned LR/HR crops; the depth interval comes from the HR depth map window."""
    s = int(sample.entry.scale)
    h, w = sample.lr.shape
    if h < crop_lr or w < crop_lr:
        raise RangeError(f"sample {sample.id}: {h}x{w} LR hologram smaller than crop {crop_lr}")
    if center or rng is None:
        y0, x0 = (h - crop_lr) // 2, (w - crop_lr) // 2
    else:
        y0 = int(rng.integers(0, h - crop_lr + 1))
        x0 = int(rng.integers(0, w - crop_lr + 1))
    lr = sample.lr.as_array()[:, y0:y0 + crop_lr, x0:x0 + crop_lr]
    hy, hx, hc = s * y0, s * x0, s * crop_lr
    hr = sample.hr.as_array()[:, hy:hy + hc, hx:hx + hc]
    depth_max = float(sample.entry.depth_max_hr_m)
    if sample.depth_hr is not None:
        window = sample.depth_hr[hy:hy + hc, hx:hx + hc]
        z_min = float(np.clip(window.min(), 0.0, depth_max))
        z_max = float(np.clip(window.max(), 0.0, depth_max))
    else:
        z_min, z_max = 0.0, depth_max
    return PatchSample(ComplexTensor.from_complex(lr[None], dtype), ComplexTensor.from_complex(hr[None], dtype),
                       z_min, z_max, sample.id, sample.hr.pitch, sample.hr.wavelengths)


# ---------------------------------------------------------------- loop

@dataclass
class TrainSettings:
    epochs: int = 1
    batch: int = 8
    lr: float = 4e-4
    crop_lr: int = 64
    steps_per_epoch: Optional[int] = None
    precision: str = 'float64'
    seed: int = 0
    workers: int = 1
    betas: Tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 1e-5
    eps: float = 1e-8

    def __post_init__(self):
        if self.precision not in ('float64', 'float32'):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision}")
        if self.batch < 1 or self.epochs < 0 or self.crop_lr < 1:
            raise ConfigError(f"invalid training settings: {self}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainSettings':
        data = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if 'betas' in data:
            data['betas'] = tuple(data['betas'])
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class Trainer:
    """Runs shuffled patch batches through forward, loss, backward and AdamW."""

    def __init__(self, model: CvRdn, loss_cfg: LossConfig, settings: TrainSettings,
                 prop_config: PropagationConfig = DEFAULT_CONFIG, show_progress: bool = False):
        self.model = model
        self.loss_cfg = loss_cfg
        self.settings = settings
        self.prop_config = prop_config
        self.show_progress = show_progress
        self.dtype = np.float32 if settings.precision == 'float32' else np.float64
        if self.dtype != model.params['sfe.0.weight'].real.dtype:
            model.params.cast(self.dtype)
            model.refresh()
        self.metric = MetricFactory.create(loss_cfg.metric)
        b1, b2 = settings.betas
        self.opt = OptState(lr=settings.lr, beta1=b1, beta2=b2,
                            weight_decay=settings.weight_decay, eps=settings.eps)
        self.epoch = 0
        self.history: List[Dict[str, Any]] = []
        self.val_history: List[Dict[str, Any]] = []

    def _log(self, message: str, level: str = 'INFO'):
        level = 'INFO' if level == 'SUCCESS' else level
        logger.log(getattr(logging, level, logging.INFO), message)

    def _rng(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.settings.seed, *keys]))

    def _item(self, patch: PatchSample, rng: np.random.Generator, batch: int):
        """Forward/backward for one patch on its own tape; loss scaled by 1/batch."""
        tape = Tape()
        x = patch.lr.cast(self.dtype)
        pred = self.model.forward(x, tape)
        if pred.shape != patch.hr.shape:
            raise DimensionError(f"sample {patch.sample_id}: network output {pred.shape} != target {patch.hr.shape}")
        value, grad, terms = total_loss(pred, patch.hr.cast(self.dtype), patch, self.loss_cfg, rng,
                                        self.metric, self.prop_config)
        tape.backward(pred, ComplexTensor(grad.real / batch, grad.imag / batch))
        return tape, terms

    def steps_per_epoch(self, n_train: int) -> int:
        if self.settings.steps_per_epoch:
            return self.settings.steps_per_epoch
        return max(1, math.ceil(n_train / self.settings.batch))

    def validate(self, samples: Sequence[PairSample]) -> Dict[str, float]:
        """Mean loss terms on deterministic centre crops."""
        if not samples:
            return {}
        sums = {'data': 0.0, 'recon': 0.0, 'total': 0.0}
        for i, sample in enumerate(samples):
            patch = sample_patch(sample, None, self.settings.crop_lr, center=True, dtype=self.dtype)
            pred = self.model.forward(patch.lr)
            _, _, terms = total_loss(pred, patch.hr.cast(self.dtype), patch, self.loss_cfg,
                                     self._rng(VALIDATION_STREAM, i), self.metric, self.prop_config)
            for k in sums:
                sums[k] += terms[k]
        return {k: v / len(samples) for k, v in sums.items()}

    def train(self, train_samples: Sequence[PairSample], val_samples: Sequence[PairSample] = (),
              epochs: Optional[int] = None) -> List[Dict[str, Any]]:
        """Train from the current epoch up to ``epochs``; returns the step log.

        The learning-rate schedule always spans at least ``settings.epochs``, so a
        run stopped early and resumed follows the same schedule.
        """
        if not train_samples:
            raise ConfigError("training set is empty")
        epochs = self.settings.epochs if epochs is None else epochs
        if not self.model.adapters:
            self.model.depth_max_hr = max(float(s.entry.depth_max_hr_m) for s in train_samples)
        n_steps = self.steps_per_epoch(len(train_samples))
        total_steps = max(epochs, self.settings.epochs) * n_steps
        batch = self.settings.batch
        self._log(f"training {len(train_samples)} samples, {epochs} epochs x {n_steps} steps, "
                  f"batch {batch}, lambda {self.loss_cfg.lam}, N {self.loss_cfg.n_planes}, "
                  f"metric {self.loss_cfg.metric}, workers {self.settings.workers}")
        if not self.val_history and val_samples:
            self.val_history.append({'epoch': 0, 'step': self.opt.step, **self.validate(val_samples)})

        progress = Progress(TextColumn("[cyan]train"), BarColumn(), TextColumn("{task.completed}/{task.total}"),
                            TimeRemainingColumn(), disable=not self.show_progress)
        with progress:
            task = progress.add_task("train", total=total_steps, completed=self.epoch * n_steps)
            pool = ThreadPoolExecutor(self.settings.workers) if self.settings.workers > 1 else None
            try:
                while self.epoch < epochs:
                    order = self._rng(self.epoch).permutation(len(train_samples))
                    for step in range(n_steps):
                        self._train_step(train_samples, order, step, n_steps, total_steps, batch, pool)
                        progress.advance(task)
                    self.epoch += 1
                    if val_samples:
                        val = self.validate(val_samples)
                        self.val_history.append({'epoch': self.epoch, 'step': self.opt.step, **val})
                        self._log(f"epoch {self.epoch}: validation total {val['total']:.6g}")
            finally:
                if pool is not None:
                    pool.shutdown()
        return self.history

    def _train_step(self, samples, order, step, n_steps, total_steps, batch, pool):
        global_step = self.epoch * n_steps + step
        jobs = []
        for j in range(batch):
            idx = int(order[(step * batch + j) % len(order)])
            rng = self._rng(self.epoch, step, j)
            try:
                patch = sample_patch(samples[idx], rng, self.settings.crop_lr, dtype=self.dtype)
            except HoloError as e:
                raise StageError('train', str(e), samples[idx].id)
            jobs.append((patch, rng))

        def run(job):
            return self._item(job[0], job[1], batch)

        results = list(pool.map(run, jobs)) if pool is not None else [run(j) for j in jobs]
        self.model.params.zero_grad()
        sums = {'data': 0.0, 'recon': 0.0, 'total': 0.0}
        for tape, terms in results:
            tape.flush(self.model.params)
            for k in sums:
                sums[k] += terms[k] / batch
        lr = cosine_lr(global_step, total_steps, self.settings.lr)
        adamw_step(self.model.params, self.opt, lr)
        row = {'epoch': self.epoch, 'step': global_step, 'lr': lr, **sums}
        self.history.append(row)
        logger.debug(f"step {global_step}: lr {lr:.3g} data {sums['data']:.5g} recon {sums['recon']:.5g}")

    # ------------------------------------------------------------ persistence

    def run_metadata(self) -> Dict[str, Any]:
        return {'network': self.model.config.to_dict(), 'loss': self.loss_cfg.to_dict(),
                'train': self.settings.to_dict(), 'epoch': self.epoch, 'step': self.opt.step,
                'depth_max_hr_m': self.model.depth_max_hr}

    def save(self, path, log_path=None):
        """CVW1 weights + JSON sidecar + full-precision resumable state."""
        ckpt.save_checkpoint(path, self.model.params, self.run_metadata())
        arrays = {f"p:{k}": v for k, v in self.model.params.to_arrays().items()}
        arrays.update(self.opt.to_arrays())
        ckpt.save_state(ckpt.state_path(path), arrays, {'epoch': self.epoch, 'step': self.opt.step})
        if log_path is not None:
            write_csv(log_path, self.history, ['epoch', 'step', 'lr', 'data', 'recon', 'total'])
            if self.val_history:
                val_path = Path(log_path).with_name(Path(log_path).stem + '_val.csv')
                write_csv(val_path, self.val_history, ['epoch', 'step', 'data', 'recon', 'total'])

    def resume(self, path):
        arrays, meta = ckpt.load_state(ckpt.state_path(path))
        self.model.params.load_arrays({k[2:]: v for k, v in arrays.items() if k.startswith('p:')})
        self.model.refresh()
        self.opt.load_arrays({k: v for k, v in arrays.items() if k[:2] in ('m:', 'v:')})
        self.opt.step = int(meta.get('step', 0))
        self.epoch = int(meta.get('epoch', 0))
        self._log(f"resumed from {path} at epoch {self.epoch}, step {self.opt.step}")


def model_from_checkpoint(path, dtype=np.float64) -> CvRdn:
    """Rebuild a network (complex or real) from CVW1 weights and the sidecar."""
    pairs, meta = ckpt.load_checkpoint(path)
    if 'network' not in meta:
        raise ConfigError(f"checkpoint {path} lacks a network config sidecar")
    store = ParamStore()
    for name, real, imag in pairs:
        store.add(name, real.astype(dtype), imag.astype(dtype))
    model = build_model(CvRdnConfig.from_dict(meta['network']), params=store)
    if meta.get('depth_max_hr_m') is not None:
        model.depth_max_hr = float(meta['depth_max_hr_m'])
    return model


def infer(model: CvRdn, holo: HologramRGB) -> HologramRGB:
    """Full-frame super-resolution of one hologram."""
    dtype = model.params['sfe.0.weight'].real.dtype
    out = model.forward(ComplexTensor.from_hologram(holo, dtype))
    return out.cast(np.float64).to_hologram(0, holo.pitch, holo.wavelengths)
