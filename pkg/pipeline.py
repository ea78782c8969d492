#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Dataset generation and the end-to-end desk-scale demonstration run."""
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.progress import BarColumn, Progress, TextColumn

from analysis import estimate_focus, sobel_edges, volumetric_eval
from cgh import SceneSpec, make_pair, procedural_scene, two_object_scene
from cvnn.network import CvRdn, build_model, parameter_count, preset
from field import DEFAULT_PITCH, WAVELENGTHS_RGB
from holo_errors import ConfigError, HoloError, StageError
from lora import adapt, plane_averaged_psnr
from propagation import DEFAULT_CONFIG, PropagationConfig, reconstruct_stack, scene_depth
from resample import CalibrationRule, bicubic_upsample
from storage import cvh
from storage.images import save_montage, write_csv
from storage.manifest import Manifest, ManifestEntry, PairSample, save_manifest, split_counts
from training import LossConfig, Trainer, TrainSettings, infer

logger = logging.getLogger(__name__)


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


class DatasetBuilder:
    """Procedural scenes rendered into LR/HR hologram pairs with a manifest."""

    def __init__(self, out_dir, count: int, lr_resolution: int = 256, scale: int = 4,
                 pitch: float = DEFAULT_PITCH, depth_range: Optional[Tuple[float, float]] = None,
                 n_primitives: int = 6, n_layers: Optional[int] = None, seed: int = 0,
                 split_ratio: Sequence[int] = (3800, 100, 100), id_prefix: str = 'sample',
                 wavelengths: Sequence[float] = WAVELENGTHS_RGB,
                 prop_config: PropagationConfig = DEFAULT_CONFIG, workers: int = 1,
                 show_progress: bool = False):
        if count < 1:
            raise ConfigError(f"dataset count must be positive, got {count}")
        self.out_dir = Path(out_dir)
        self.count = count
        self.lr_resolution = lr_resolution
        self.scale = scale
        self.pitch = pitch
        self.depth_range = depth_range or (0.0, scene_depth(lr_resolution, pitch))
        self.n_primitives = n_primitives
        self.n_layers = n_layers
        self.seed = seed
        self.split_ratio = tuple(split_ratio)
        self.id_prefix = id_prefix
        self.wavelengths = tuple(wavelengths)
        self.prop_config = prop_config
        self.workers = workers
        self.show_progress = show_progress

    def _log(self, message: str, level: str = 'INFO'):
        level = 'INFO' if level == 'SUCCESS' else level
        logger.log(getattr(logging, level, logging.INFO), message)

    def _splits(self) -> List[str]:
        counts = split_counts(self.count, self.split_ratio)
        return [name for name in ('train', 'val', 'test') for _ in range(counts[name])]

    def build_one(self, index: int, split: str) -> ManifestEntry:
        sample_id = f"{self.id_prefix}_{index:05d}"
        spec = SceneSpec(seed=sample_seed(self.seed, index), n_primitives=self.n_primitives,
                         depth_min=self.depth_range[0], depth_max=self.depth_range[1],
                         resolution=self.lr_resolution)
        try:
            scene = procedural_scene(spec)
            lr, hr, hr_scene = make_pair(scene, self.scale, self.lr_resolution, self.pitch,
                                         self.n_layers, self.wavelengths, self.prop_config, self.workers)
        except HoloError as e:
            raise StageError('generate', str(e), sample_id)
        entry = ManifestEntry(id=sample_id, lr_path=f"lr/{sample_id}.cvh", hr_path=f"hr/{sample_id}.cvh",
                              scale=self.scale, pitch_m=self.pitch, depth_max_lr_m=scene.depth_max,
                              depth_max_hr_m=hr_scene.depth_max, split=split,
                              depth_map_path=f"depth/{sample_id}.npy", seed=spec.seed)
        cvh.save_hologram(self.out_dir / entry.lr_path, lr)
        cvh.save_hologram(self.out_dir / entry.hr_path, hr)
        depth_path = self.out_dir / entry.depth_map_path
        depth_path.parent.mkdir(parents=True, exist_ok=True)
        np.save(depth_path, hr_scene.depth)
        meta_path = self.out_dir / 'meta' / f"{sample_id}.json"
        meta_path.parent.mkdir(parents=True, exist_ok=True)
        meta = {**entry.to_dict(), 'n_primitives': spec.n_primitives, 'kinds': list(spec.kinds),
                'depth_min_m': spec.depth_min, 'lr_resolution': self.lr_resolution,
                'wavelengths_m': list(self.wavelengths)}
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding='utf-8')
        return entry

    def build(self) -> Manifest:
        """Render every sample, then write manifest.json and splits.json."""
        self._log(f"generating {self.count} pairs: {self.lr_resolution}px x{self.scale}, depth "
                  f"[{self.depth_range[0]:.6g}, {self.depth_range[1]:.6g}] m, seed {self.seed}, "
                  f"workers {self.workers}")
        entries = []
        progress = Progress(TextColumn("[cyan]generate"), BarColumn(), TextColumn("{task.completed}/{task.total}"),
                            disable=not self.show_progress)
        with progress:
            task = progress.add_task("generate", total=self.count)
            for index, split in enumerate(self._splits()):
                entries.append(self.build_one(index, split))
                progress.advance(task)
        manifest = Manifest(entries, self.out_dir)
        manifest.validate()
        save_manifest(self.out_dir / 'manifest.json', manifest)
        splits = {name: [e.id for e in manifest.split(name)] for name in ('train', 'val', 'test')}
        (self.out_dir / 'splits.json').write_text(json.dumps(splits, indent=2), encoding='utf-8')
        self._log(f"dataset written to {self.out_dir}", 'SUCCESS')
        return manifest


def load_split(manifest: Manifest, split: str) -> List[PairSample]:
    return [manifest.load_pair(e) for e in manifest.split(split)]


# ---------------------------------------------------------------- demo

@dataclass(frozen=True)
class DemoPreset:
    lr_resolution: int
    scale: int
    network: str
    n_train: int
    n_val: int
    n_test: int
    epochs: int
    steps_per_epoch: int
    batch: int
    crop_lr: int
    n_primitives: int = 4
    n_layers: Optional[int] = None
    eval_planes: int = 40
    focus_planes: int = 64
    base_depth_fraction: float = 2.0 / 3.0
    lora_samples: int = 0
    lora_steps: int = 0
    lora_rank: int = 8
    lora_alpha: float = 16.0
    real_network: Optional[str] = None
    scratch_samples: int = 0
    scratch_steps: int = 0


DEMO_PRESETS: Dict[str, DemoPreset] = {
    'smoke': DemoPreset(lr_resolution=16, scale=2, network='tiny', n_train=4, n_val=1, n_test=1,
                        epochs=1, steps_per_epoch=2, batch=2, crop_lr=16, n_primitives=3, n_layers=8,
                        eval_planes=4, focus_planes=8, lora_samples=2, lora_steps=1, lora_rank=2,
                        real_network='real_tiny', scratch_samples=2, scratch_steps=1),
    'demo': DemoPreset(lr_resolution=32, scale=2, network='toy', n_train=40, n_val=4, n_test=4,
                       epochs=2, steps_per_epoch=20, batch=4, crop_lr=32, n_layers=16,
                       eval_planes=8, focus_planes=32, lora_samples=8, lora_steps=10, lora_rank=4,
                       real_network='real_toy', scratch_samples=40, scratch_steps=40),
    'acceptance': DemoPreset(lr_resolution=32, scale=2, network='toy', n_train=200, n_val=20, n_test=20,
                             epochs=1, steps_per_epoch=500, batch=8, crop_lr=32,
                             eval_planes=40, focus_planes=64, lora_samples=50, lora_steps=200,
                             real_network='real_toy', scratch_samples=200, scratch_steps=500),
}


def demo_preset(name: str, settings: Optional[Dict[str, Any]] = None) -> DemoPreset:
    """Built-in preset, updated by the matching config.json 'demo' entry if any."""
    if name not in DEMO_PRESETS:
        raise ConfigError(f"unknown demo preset {name!r}; available: {sorted(DEMO_PRESETS)}")
    overrides = (settings or {}).get(name, {})
    unknown = [k for k in overrides if k not in DemoPreset.__dataclass_fields__]
    if unknown:
        raise ConfigError(f"demo preset {name!r}: unknown keys {unknown}")
    return replace(DEMO_PRESETS[name], **overrides)


def _f(value: float) -> str:
    return f"{value:.4f}"


class PipelineDemo:
    """Dataset -> train -> evaluate -> focus -> adapt, with a markdown report."""

    def __init__(self, preset_name: str = 'smoke', seed: int = 0, out_dir='demo_out', workers: int = 1,
                 scale: Optional[int] = None, loss_cfg: Optional[LossConfig] = None,
                 demo_settings: Optional[Dict[str, Any]] = None, show_progress: bool = False):
        self.preset_name = preset_name
        self.preset = demo_preset(preset_name, demo_settings)
        if scale is not None:
            self.preset = replace(self.preset, scale=scale)
        self.seed = seed
        self.out_dir = Path(out_dir)
        self.workers = workers
        self.loss_cfg = loss_cfg or LossConfig(seed=seed)
        self.show_progress = show_progress
        self.sections: List[str] = []
        # stage outputs of the last run, keyed by stage
        self.results: Dict[str, Any] = {}

    def _log(self, message: str, level: str = 'INFO'):
        level = 'INFO' if level == 'SUCCESS' else level
        logger.log(getattr(logging, level, logging.INFO), message)

    def _stage(self, name: str, fn: Callable[[], Any]) -> Any:
        self._log(f"stage {name}")
        try:
            return fn()
        except StageError:
            raise
        except HoloError as e:
            logger.error(f"[{name}] {e}")
            raise StageError(name, str(e))

    def _settings(self, epochs: int, steps: Optional[int], seed: int) -> TrainSettings:
        p = self.preset
        return TrainSettings(epochs=epochs, batch=p.batch, crop_lr=p.crop_lr, steps_per_epoch=steps,
                             seed=seed, workers=self.workers)

    def _depth_max(self, fraction: float) -> float:
        return fraction * scene_depth(self.preset.lr_resolution, DEFAULT_PITCH)

    def _dataset(self, name: str, fraction: float, counts: Tuple[int, int, int], seed: int) -> Manifest:
        p = self.preset
        builder = DatasetBuilder(self.out_dir / name, sum(counts), p.lr_resolution, p.scale,
                                 depth_range=(0.0, self._depth_max(fraction)), n_primitives=p.n_primitives,
                                 n_layers=p.n_layers, seed=seed, split_ratio=counts, id_prefix=name,
                                 workers=self.workers, show_progress=self.show_progress)
        return builder.build()

    def _evaluate(self, model: CvRdn, samples: Sequence[PairSample],
                  baseline: Optional[CvRdn] = None) -> List[Dict[str, Any]]:
        p = self.preset
        methods = {'bicubic': [], 'bicubic_calibrated': [], 'network': []}
        if baseline is not None:
            methods['real_rdn'] = []
        per_plane = {}
        for sample in samples:
            z_max = sample.entry.depth_max_hr_m
            bic = bicubic_upsample(sample.lr, p.scale)
            runs = {
                'bicubic': (bic, CalibrationRule(p.scale, 'none')),
                'bicubic_calibrated': (bic, CalibrationRule(p.scale, 'calibrated')),
                'network': (infer(model, sample.lr), None),
            }
            if baseline is not None:
                runs['real_rdn'] = (infer(baseline, sample.lr), None)
            for method, (holo, rule) in runs.items():
                metrics = volumetric_eval(holo, sample.hr, p.eval_planes, z_max, rule, workers=self.workers)
                methods[method].append(metrics)
                per_plane.setdefault(method, metrics)
        rows = []
        for method, results in methods.items():
            rows.append({'method': method,
                         'psnr_db': float(np.mean([m.mean_psnr for m in results])),
                         'ssim': float(np.mean([m.mean_ssim for m in results]))})
            write_csv(self.out_dir / f"planes_{method}.csv", per_plane[method].rows(),
                      ['plane', 'z_m', 'psnr_db', 'ssim'])
        write_csv(self.out_dir / 'eval.csv', rows, ['method', 'psnr_db', 'ssim'])
        self._sweeps(model, samples[0])
        return rows

    def _sweeps(self, model: CvRdn, sample: PairSample):
        """Amplitude montages of one test sample, jointly normalized to the ground-truth peak."""
        p = self.preset
        depths = np.linspace(0.0, sample.entry.depth_max_hr_m, p.eval_planes)
        gt = reconstruct_stack(sample.hr, -depths, workers=self.workers)
        vmax = float(gt.max()) or 1.0
        bic = reconstruct_stack(bicubic_upsample(sample.lr, p.scale), -p.scale * depths, workers=self.workers)
        net = reconstruct_stack(infer(model, sample.lr), -depths, workers=self.workers)
        for name, stack in (('gt', gt), ('bicubic_calibrated', bic), ('network', net)):
            save_montage(self.out_dir / f"sweep_{name}.png", stack, vmax=vmax)

    def _focus(self, model: CvRdn) -> List[Dict[str, Any]]:
        """Per-object focus depth of a two-object scene for ground truth and network output."""
        p = self.preset
        depth_max = self._depth_max(p.base_depth_fraction)
        scene = two_object_scene(p.lr_resolution, (0.0, 0.7 * depth_max), depth_max, seed=self.seed)
        lr, hr, hr_scene = make_pair(scene, p.scale, p.lr_resolution, n_layers=p.n_layers, workers=self.workers)
        grid = np.linspace(0.0, hr_scene.depth_max, p.focus_planes)
        pred = infer(model, lr)
        side = hr.shape[1]
        luminance = hr_scene.luminance()
        rows = []
        for label, x0 in (('left', 0), ('right', side // 2)):
            region = (x0, 0, side // 2, hr.shape[0])
            ref = sobel_edges(luminance[:, x0:x0 + side // 2])
            truth = float(hr_scene.depth[0, x0])
            gt_curve = estimate_focus(hr, ref, grid, region=region)
            net_curve = estimate_focus(pred, ref, grid, region=region)
            rows.append({'object': label, 'true_depth_m': truth, 'gt_depth_m': gt_curve.z_hat,
                         'network_depth_m': net_curve.z_hat, 'grid_step_m': float(grid[1] - grid[0])})
        write_csv(self.out_dir / 'focus.csv', rows)
        return rows

    def _train(self, network: str, train: Sequence[PairSample], val: Sequence[PairSample],
               steps: int, tag: str = '') -> Trainer:
        """Train one network of the preset's size; ``tag`` suffixes the checkpoint and log names."""
        p = self.preset
        model = build_model(preset(network, scale=p.scale), seed=self.seed)
        trainer = Trainer(model, self.loss_cfg, self._settings(p.epochs, steps, self.seed),
                          show_progress=self.show_progress)
        trainer.train(train, val)
        trainer.save(self.out_dir / f"model{tag}.cvw", self.out_dir / f"train_log{tag}.csv")
        return trainer

    def _adapt(self, model: CvRdn, in_range_val: Sequence[PairSample]) -> Optional[Dict[str, Any]]:
        """Frozen, adapted and scratch-trained quality on a 1.5x deeper depth range."""
        p = self.preset
        if p.lora_samples < 1:
            return None
        counts = (max(p.lora_samples, p.scratch_samples), p.n_val, 0)
        manifest = self._dataset('shifted', 1.5 * p.base_depth_fraction, counts, self.seed + 1)
        train, val = load_split(manifest, 'train'), load_split(manifest, 'val')
        adapted = build_model(model.config, params=model.params.copy())
        adapted.depth_max_hr = model.depth_max_hr
        settings = self._settings(1 if p.lora_steps else 0, p.lora_steps or None, self.seed)
        report = adapt(adapted, train, val, settings, self.loss_cfg, n_samples=p.lora_samples,
                       r=p.lora_rank, alpha=p.lora_alpha, eval_planes=p.eval_planes)
        row = report.to_dict()
        row['frozen_in_range_psnr_db'] = plane_averaged_psnr(model, in_range_val, p.eval_planes, self.workers)
        row['range_drop_db'] = row['frozen_in_range_psnr_db'] - row['frozen_psnr_db']
        if p.scratch_samples > 0 and p.scratch_steps > 0:
            scratch = self._train(p.network, train[:p.scratch_samples], val, p.scratch_steps, '_scratch')
            row['scratch_psnr_db'] = plane_averaged_psnr(scratch.model, val, p.eval_planes, self.workers)
            gap = row['scratch_psnr_db'] - row['frozen_psnr_db']
            row['gap_recovered'] = report.gain_db / gap if gap > 0 else float('nan')
        write_csv(self.out_dir / 'adapt.csv', [row])
        return row

    def run(self) -> Path:
        """Run every stage and write report.md; returns the report path."""
        p = self.preset
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._log(f"pipeline demo {self.preset_name}: seed {self.seed}, scale {p.scale}, "
                  f"network {p.network}, workers {self.workers}")
        manifest = self._stage('dataset', lambda: self._dataset(
            'base', p.base_depth_fraction, (p.n_train, p.n_val, p.n_test), self.seed))
        train = load_split(manifest, 'train')
        val = load_split(manifest, 'val')
        test = load_split(manifest, 'test') or val

        trainer = self._stage('train', lambda: self._train(p.network, train, val, p.steps_per_epoch))
        model = trainer.model
        baseline = None
        if p.real_network:
            baseline = self._stage('train_real', lambda: self._train(
                p.real_network, train, val, p.steps_per_epoch, '_real')).model

        eval_rows = self._stage('eval', lambda: self._evaluate(model, test, baseline))
        focus_rows = self._stage('focus', lambda: self._focus(model))
        adapt_row = self._stage('adapt', lambda: self._adapt(model, val))
        self.results = {'val_history': list(trainer.val_history), 'eval': eval_rows,
                        'focus': focus_rows, 'adapt': adapt_row}

        report = self._report(trainer, eval_rows, focus_rows, adapt_row, baseline)
        path = self.out_dir / 'report.md'
        path.write_text(report, encoding='utf-8')
        self._log(f"report written to {path}", 'SUCCESS')
        return path

    def _report(self, trainer: Trainer, eval_rows, focus_rows, adapt_row,
                baseline: Optional[CvRdn] = None) -> str:
        p = self.preset
        lines = [f"# Pipeline demo: {self.preset_name}", "",
                 "## Configuration", "",
                 "```json", json.dumps({'seed': self.seed, 'preset': asdict(p),
                                        'loss': self.loss_cfg.to_dict()}, indent=2, sort_keys=True), "```", ""]
        lines += ["## Training", "", "| checkpoint | data | recon | total |", "|---|---|---|---|"]
        for row in trainer.val_history:
            lines.append(f"| epoch {row['epoch']} | {_f(row['data'])} | {_f(row['recon'])} | {_f(row['total'])} |")
        if trainer.history:
            last = trainer.history[-1]
            lines.append(f"| last train step | {_f(last['data'])} | {_f(last['recon'])} | {_f(last['total'])} |")
        lines += ["", f"## Volumetric evaluation ({p.eval_planes} planes, test split)", "",
                  "| method | PSNR (dB) | SSIM |", "|---|---|---|"]
        lines += [f"| {r['method']} | {_f(r['psnr_db'])} | {_f(r['ssim'])} |" for r in eval_rows]
        by_method = {r['method']: r['psnr_db'] for r in eval_rows}
        lines += ["", f"Network minus calibrated bicubic: "
                      f"{_f(by_method['network'] - by_method['bicubic_calibrated'])} dB"]
        if baseline is not None:
            lines += ["", f"Trainable real scalars: complex network {parameter_count(trainer.model.config)}, "
                          f"real RDN ({p.real_network}) {parameter_count(baseline.config)}."]
        lines += ["", "Sweep images share one normalization per stack (ground-truth peak).", ""]
        lines += ["## Focus diagnostic", "", "| object | true (m) | ground truth (m) | network (m) |",
                  "|---|---|---|---|"]
        lines += [f"| {r['object']} | {r['true_depth_m']:.6g} | {r['gt_depth_m']:.6g} | "
                  f"{r['network_depth_m']:.6g} |" for r in focus_rows]
        if adapt_row is not None:
            lines += ["", "## Depth-range adaptation", "",
                      "| samples | rank | in-range PSNR (dB) | frozen PSNR (dB) | adapted PSNR (dB) | "
                      "trainable ratio | backbone intact |",
                      "|---|---|---|---|---|---|---|",
                      f"| {adapt_row['n_samples']} | {adapt_row['rank']} | "
                      f"{_f(adapt_row['frozen_in_range_psnr_db'])} | {_f(adapt_row['frozen_psnr_db'])} | "
                      f"{_f(adapt_row['adapted_psnr_db'])} | {_f(adapt_row['trainable_ratio'])} | "
                      f"{adapt_row['backbone_intact']} |"]
            if 'scratch_psnr_db' in adapt_row:
                lines += ["", f"Scratch-trained on the new range: {_f(adapt_row['scratch_psnr_db'])} dB; "
                              f"adapters recover {_f(adapt_row['gap_recovered'])} of the frozen-to-scratch gap."]
        return "\n".join(lines) + "\n"
