#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Command-line entry point for hologram generation, super-resolution and analysis."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from rich.logging import RichHandler

from analysis import estimate_focus, sobel_edges, sweep_stacks, volumetric_eval
from cvnn.network import CvRdnConfig, build_model
from encode import EncodeConfig, encode_hologram, phase_to_uint16
from holo_config import HoloSettings, RunConfig, resolve_workers
from holo_errors import ConfigError, DimensionError, HoloError
from holo_ui import HoloUI
from lora import adapt, load_adapters, merge, save_adapters
from pipeline import DatasetBuilder, PipelineDemo, load_split
from propagation import PropagationConfig, max_distance_table, propagate_stack, scene_depth
from resample import CalibrationRule, apodize, bicubic_upsample
from storage import checkpoint as ckpt
from storage import cvh
from storage.images import load_gray, save_amplitude_png, save_montage, save_uint16_png, write_csv
from storage.manifest import load_manifest
from training import LossConfig, Trainer, infer, model_from_checkpoint

logger = logging.getLogger('holo')

EXIT_HOLO_ERROR = 2
EXIT_FAILURE = 1

# CLI distances are millimetres
MM = 1e-3
ENERGY_COLUMNS = ('energy_red', 'energy_green', 'energy_blue')


def setup_logging(level: str = 'INFO', log_file: str = 'holo_debug.log'):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s [%(levelname)s] %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            RichHandler(show_time=False, show_path=False),
        ],
        force=True,
    )


def prop_config(settings: HoloSettings) -> PropagationConfig:
    optics = settings.section('optics')
    return PropagationConfig(pad_factor=float(optics.get('pad_factor', 2.0)),
                             band_limited=bool(optics.get('band_limited', True)),
                             cache_transfers=bool(optics.get('cache_transfers', True)))


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True), encoding='utf-8')


def read_sidecar(path) -> dict:
    side = ckpt.sidecar_path(path)
    if not side.exists():
        return {}
    return json.loads(side.read_text(encoding='utf-8'))


# ---------------------------------------------------------------- commands

def cmd_generate(args, settings, ui):
    dataset = settings.section('dataset')
    lr_res = args.lr_res or dataset.get('lr_resolution', 256)
    pitch = args.pitch or settings.get('optics.pitch_m')
    depth_max = args.depth_fraction * scene_depth(lr_res, pitch)
    builder = DatasetBuilder(args.out_dir, args.count, lr_res, args.scale or dataset.get('scale', 4),
                             pitch=pitch, depth_range=(0.0, depth_max),
                             n_primitives=args.primitives or dataset.get('n_primitives', 6),
                             n_layers=args.layers, seed=args.seed,
                             split_ratio=dataset.get('split_ratio', (3800, 100, 100)),
                             wavelengths=settings.get('optics.wavelengths_m'),
                             prop_config=prop_config(settings), workers=args.workers,
                             show_progress=not args.quiet)
    manifest = builder.build()
    ui.print_success(f"{len(manifest)} pairs written to {args.out_dir}")


def cmd_upsample(args, settings, ui):
    holo = cvh.load_hologram(args.input)
    if args.apodize != 'none':
        holo = holo.map(lambda ch: apodize(ch, args.apodize, args.alpha))
    meta = {'method': args.method, 'calibration': 'calibrated' if args.calibrate else 'none',
            'apodization': args.apodize, 'source': str(args.input)}
    if args.method == 'network':
        if not args.checkpoint:
            raise ConfigError("--method network needs --checkpoint")
        model = model_from_checkpoint(args.checkpoint)
        if args.scale and args.scale != model.config.scale:
            raise ConfigError(f"--scale {args.scale} does not match the checkpoint scale {model.config.scale}")
        out = infer(model, holo)
        meta.update(scale=model.config.scale, checkpoint=str(args.checkpoint))
    else:
        if not args.scale:
            raise ConfigError("--method bicubic needs --scale")
        out = bicubic_upsample(holo, args.scale)
        meta['scale'] = args.scale
    cvh.save_hologram(args.out, out)
    write_json(ckpt.sidecar_path(args.out), meta)
    ui.print_success(f"{holo.shape} -> {out.shape} written to {args.out} ({args.method})")


def cmd_propagate(args, settings, ui):
    holo = cvh.load_hologram(args.input)
    z_list = [z * MM for z in args.z]
    planes = propagate_stack(holo, z_list, prop_config(settings), args.workers)
    out = Path(args.out_dir)
    for i, plane in enumerate(planes):
        cvh.save_hologram(out / f"plane_{i:03d}.cvh", plane)
    if args.png:
        stack = np.stack([plane.amplitude() for plane in planes])
        vmax = float(stack.max())
        for i, amp in enumerate(stack):
            save_amplitude_png(out / f"plane_{i:03d}.png", amp, vmax=vmax)
        save_montage(out / 'montage.png', stack, vmax=vmax)
    if args.csv:
        rows = []
        for i, (z, plane) in enumerate(zip(z_list, planes)):
            energy = [float(np.sum(np.abs(ch.data) ** 2)) for ch in plane]
            rows.append({'plane': i, 'z_m': z, **dict(zip(ENERGY_COLUMNS, energy)), 'energy': sum(energy)})
        write_csv(args.csv, rows)
    ui.print_success(f"{len(planes)} planes written to {out}")


def _run_config(args, settings) -> RunConfig:
    overrides = {'network': args.preset} if args.preset else {}
    if args.run_config:
        run = RunConfig.from_file(args.run_config, settings, **overrides)
    else:
        run = RunConfig.from_settings(settings, **overrides)
    loss = run.loss.to_dict()
    for key, value in (('lambda', args.lam), ('n_planes', args.planes), ('metric', args.metric)):
        if value is not None:
            loss[key] = value
    train = run.train.to_dict()
    for key, value in (('epochs', args.epochs), ('steps_per_epoch', args.steps), ('batch', args.batch),
                       ('lr', args.lr), ('crop_lr', args.crop), ('precision', args.precision),
                       ('seed', args.seed)):
        if value is not None:
            train[key] = value
    train['workers'] = args.workers
    return RunConfig.from_dict({'network': run.network.to_dict(), 'loss': {**loss, 'seed': train['seed']},
                                'training': train, 'seed': train['seed']})


def cmd_train(args, settings, ui):
    run = _run_config(args, settings)
    manifest = load_manifest(args.manifest)
    train, val = load_split(manifest, 'train'), load_split(manifest, 'val')
    scale = train[0].entry.scale if train else run.network.scale
    network = CvRdnConfig.from_dict({**run.network.to_dict(), 'scale': scale})
    model = build_model(network, seed=run.seed)
    trainer = Trainer(model, run.loss, run.train, prop_config(settings), show_progress=not args.quiet)
    if args.resume:
        trainer.resume(args.out)
    trainer.train(train, val)
    log_csv = Path(args.log) if args.log else Path(args.out).with_suffix('.csv')
    trainer.save(args.out, log_csv)
    if trainer.val_history:
        ui.show_table("validation loss", trainer.val_history)
    ui.print_success(f"checkpoint written to {args.out}, log to {log_csv}")


def cmd_adapt(args, settings, ui):
    run = _run_config(args, settings)
    lora_cfg = settings.section('lora')
    model = model_from_checkpoint(args.base_checkpoint)
    manifest = load_manifest(args.manifest)
    train, val = load_split(manifest, 'train'), load_split(manifest, 'val')
    report = adapt(model, train, val, run.train, run.loss,
                   n_samples=args.samples or lora_cfg.get('n_samples', 50),
                   r=args.rank or lora_cfg.get('rank', 8),
                   alpha=args.alpha or lora_cfg.get('alpha', 16.0),
                   eval_planes=args.eval_planes, show_progress=not args.quiet)
    save_adapters(args.out, model)
    write_json(ckpt.sidecar_path(args.out), {**report.to_dict(), 'backbone': str(args.base_checkpoint)})
    ui.show_table("adaptation", [report.to_dict()])
    if not report.backbone_intact:
        ui.print_warning("backbone parameters changed during adaptation")
    if args.merged_out:
        merge(model)
        ckpt.save_checkpoint(args.merged_out, model.params, {'network': model.config.to_dict(),
                                                             'merged_adapters': str(args.out)})
        ui.print_success(f"merged checkpoint written to {args.merged_out}")
    ui.print_success(f"adapters written to {args.out}")


def cmd_infer(args, settings, ui):
    model = model_from_checkpoint(args.checkpoint)
    if args.adapters:
        load_adapters(args.adapters, model)
    holo = cvh.load_hologram(args.input)
    out = infer(model, holo)
    cvh.save_hologram(args.out, out)
    write_json(ckpt.sidecar_path(args.out), {'method': 'network', 'scale': model.config.scale,
                                             'calibration': 'none', 'checkpoint': str(args.checkpoint)})
    ui.print_success(f"{holo.shape} -> {out.shape} written to {args.out}")


def _calibration(args) -> Optional[CalibrationRule]:
    if args.calibrate is not None:
        return CalibrationRule(args.calibrate, 'calibrated')
    side = read_sidecar(args.pred)
    if side.get('calibration', 'none') == 'calibrated':
        return CalibrationRule(side.get('scale', 1), 'calibrated')
    return None


def cmd_eval(args, settings, ui):
    pred = cvh.load_hologram(args.pred)
    gt = cvh.load_hologram(args.gt)
    rule = _calibration(args)
    n_planes = args.planes or settings.get('analysis.n_planes', 40)
    z_max = args.z_max * MM if args.z_max is not None else None
    metrics = volumetric_eval(pred, gt, n_planes, z_max, rule, prop_config(settings), args.workers)
    if args.csv:
        write_csv(args.csv, metrics.rows(), ['plane', 'z_m', 'psnr_db', 'ssim'])
    if args.png:
        # ground-truth planes on the first row, prediction on the second
        _, pred_stack, gt_stack = sweep_stacks(pred, gt, n_planes, z_max, rule, prop_config(settings),
                                               args.workers)
        save_montage(args.png, np.concatenate([gt_stack, pred_stack]), cols=n_planes, vmax=1.0)
    ui.show_table("volumetric evaluation", metrics.rows())
    mode = f"calibrated x{rule.scale:g}" if rule is not None else 'uncalibrated'
    ui.print_success(f"mean PSNR {metrics.mean_psnr:.3f} dB, mean SSIM {metrics.mean_ssim:.4f} ({mode})")


def _focus_source(args, settings):
    """(source, pitch, shape) for a .cvh hologram or a .npy complex feature dump."""
    path = Path(args.input)
    if path.suffix == '.npy':
        data = np.load(path)
        if data.ndim not in (2, 3):
            raise DimensionError(f"feature dump {path} must be (H, W) or (C, H, W), got {data.shape}")
        return data, args.pitch or settings.get('optics.pitch_m'), data.shape[-2:]
    holo = cvh.load_hologram(path)
    return holo, holo.pitch, holo.shape


def cmd_analyze_focus(args, settings, ui):
    source, pitch, shape = _focus_source(args, settings)
    region = tuple(args.region) if args.region else None
    size = (region[3], region[2]) if region else shape
    ref = sobel_edges(load_gray(args.ref, size))
    z_max = args.z_max * MM if args.z_max is not None else scene_depth(max(shape), pitch)
    depths = np.linspace(args.z_min * MM, z_max, args.steps)
    curve = estimate_focus(source, ref, depths, k=args.k or settings.get('analysis.k', 3), region=region,
                           pitch=pitch, wavelength=settings.get('analysis.focus_wavelength_m', 532e-9),
                           config=prop_config(settings))
    if args.csv:
        write_csv(args.csv, [{'z_m': z, 'ncc': s} for z, s in zip(curve.depths, curve.scores)])
    ui.print_success(f"estimated focus depth {curve.z_hat / MM:.6g} mm "
                     f"(top-{curve.k} of {len(depths)} planes)")


def cmd_encode_dpm(args, settings, ui):
    holo = cvh.load_hologram(args.input)
    cfg = EncodeConfig(dz=args.dz * MM, cx=args.cx, cy=args.cy)
    phases, meta = encode_hologram(holo, cfg, prop_config(settings))
    out = Path(args.out)
    for name, phase in zip(('red', 'green', 'blue'), phases):
        save_uint16_png(out / f"phase_{name}.png", phase_to_uint16(phase))
    write_json(out / 'encode.json', meta)
    ui.print_success(f"phase rasters written to {out}")


def cmd_pipeline_demo(args, settings, ui):
    loss = LossConfig.from_dict({**settings.section('loss'), 'seed': args.seed})
    demo = PipelineDemo(args.preset, seed=args.seed, out_dir=args.out, workers=args.workers,
                        scale=args.scale, loss_cfg=loss, demo_settings=settings.section('demo'),
                        show_progress=not args.quiet)
    report = demo.run()
    ui.print_success(f"report written to {report}")


def cmd_depth_table(args, settings, ui):
    rows = max_distance_table(args.resolutions, settings.get('optics.pitch_m'),
                              settings.get('optics.wavelengths_m'))
    if args.csv:
        write_csv(args.csv, rows)
    ui.show_table("maximum propagation distance (m)", rows)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='launch_holo', description=__doc__,
                                     epilog='Distances on the command line are in millimetres; '
                                            'files store meters.')
    parser.add_argument('--config', default='config.json', help='settings file')
    parser.add_argument('--workers', type=int, default=None, help='worker threads (overrides HOLO_WORKERS)')
    parser.add_argument('--log-level', default=None)
    parser.add_argument('--quiet', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate', help='render a procedural LR/HR dataset')
    p.add_argument('--out-dir', '--out', dest='out_dir', required=True)
    p.add_argument('--count', type=int, required=True)
    p.add_argument('--lr-res', type=int)
    p.add_argument('--scale', type=int)
    p.add_argument('--pitch', type=float, help='pixel pitch in meters (default from settings, 3.6e-6)')
    p.add_argument('--primitives', type=int)
    p.add_argument('--layers', type=int)
    p.add_argument('--depth-fraction', type=float, default=1.0,
                   help='LR depth range as a fraction of 2 * M * pitch')
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('upsample', help='bicubic or network volume up-sampling')
    p.add_argument('--input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--method', choices=['bicubic', 'network'], default='bicubic')
    p.add_argument('--scale', type=int)
    p.add_argument('--checkpoint', help='network weights for --method network')
    p.add_argument('--calibrate', action='store_true',
                   help='mark the output so eval reconstructs it at calibrated distances')
    p.add_argument('--apodize', choices=['none', 'white', 'tukey'], default='none')
    p.add_argument('--alpha', type=float, default=0.25)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser('propagate', help='propagate a hologram to signed distances')
    p.add_argument('--input', required=True)
    p.add_argument('--z', type=float, nargs='+', action='extend', required=True,
                   help='signed distances in mm (repeatable)')
    p.add_argument('--out-dir', required=True, help='receives plane_NNN.cvh per distance')
    p.add_argument('--png', action='store_true', help='also write normalized amplitude images')
    p.add_argument('--csv', help='per-plane energy table')
    p.set_defaults(func=cmd_propagate)

    for name, func in (('train', cmd_train), ('adapt', cmd_adapt)):
        p = sub.add_parser(name, help=f'{name} the CV-RDN')
        p.add_argument('--manifest', required=True)
        p.add_argument('--out', required=True)
        p.add_argument('--config', dest='run_config', help='run file with network, loss and training sections')
        p.add_argument('--preset')
        p.add_argument('--epochs', type=int)
        p.add_argument('--steps', type=int, help='steps per epoch')
        p.add_argument('--batch', type=int)
        p.add_argument('--lr', type=float)
        p.add_argument('--crop', type=int)
        p.add_argument('--lambda', dest='lam', type=float)
        p.add_argument('--planes', type=int)
        p.add_argument('--metric')
        p.add_argument('--precision', choices=['float64', 'float32'])
        p.add_argument('--seed', type=int, default=0)
        p.set_defaults(func=func)
        if name == 'train':
            p.add_argument('--log', help='training log CSV (default: checkpoint path with .csv)')
            p.add_argument('--resume', action='store_true')
        else:
            p.add_argument('--base-checkpoint', '--checkpoint', dest='base_checkpoint', required=True)
            p.add_argument('--samples', '--n-samples', dest='samples', type=int)
            p.add_argument('--rank', type=int)
            p.add_argument('--alpha', type=float)
            p.add_argument('--eval-planes', type=int, default=8)
            p.add_argument('--merged-out')

    p = sub.add_parser('infer', help='full-frame network super-resolution')
    p.add_argument('--input', required=True)
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--adapters')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('eval', help='plane-wise PSNR/SSIM against a ground-truth hologram')
    p.add_argument('--pred', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--planes', type=int)
    p.add_argument('--z-max', type=float, help='mm')
    p.add_argument('--calibrate', type=float, metavar='S',
                   help='reconstruct the prediction at distances calibrated for scale S')
    p.add_argument('--csv')
    p.add_argument('--png', help='sweep montage, ground truth above prediction')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('analyze-focus', help='edge-correlation focus depth estimate')
    p.add_argument('--input', required=True, help='.cvh hologram or .npy complex feature dump')
    p.add_argument('--ref', '--reference', dest='ref', required=True, help='reference image (PNG)')
    p.add_argument('--z-min', type=float, default=0.0, help='mm')
    p.add_argument('--z-max', type=float, help='mm')
    p.add_argument('--steps', '--planes', dest='steps', type=int, default=64)
    p.add_argument('--k', type=int)
    p.add_argument('--pitch', type=float, help='pitch in meters for feature dumps')
    p.add_argument('--region', type=int, nargs=4, metavar=('X0', 'Y0', 'W', 'H'))
    p.add_argument('--csv')
    p.set_defaults(func=cmd_analyze_focus)

    p = sub.add_parser('encode-dpm', help='phase-only double-phase encoding')
    p.add_argument('--input', required=True)
    p.add_argument('--out', '--out-dir', dest='out', required=True, help='directory for the phase rasters')
    p.add_argument('--dz', type=float, default=9.0, help='axial shift in mm')
    p.add_argument('--cx', type=float, default=1.1)
    p.add_argument('--cy', type=float, default=0.5)
    p.set_defaults(func=cmd_encode_dpm)

    p = sub.add_parser('pipeline-demo', help='dataset, training, evaluation and report')
    p.add_argument('--preset', default='smoke')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--scale', type=int)
    p.add_argument('--out', default='demo_out')
    p.set_defaults(func=cmd_pipeline_demo)

    p = sub.add_parser('depth-table', help='maximum propagation distance per resolution')
    p.add_argument('--resolutions', type=int, nargs='+', default=[256, 512, 1024, 2048, 4096])
    p.add_argument('--csv')
    p.set_defaults(func=cmd_depth_table)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    ui = HoloUI(quiet=args.quiet)
    try:
        settings = HoloSettings(args.config)
        setup_logging(args.log_level or settings.get('logging.level', 'INFO'),
                      settings.get('logging.file', 'holo_debug.log'))
        args.workers = resolve_workers(args.workers, settings)
        logger.info(f"{args.command}: workers {args.workers}")
        args.func(args, settings, ui)
    except HoloError as e:
        logger.debug("command failed", exc_info=True)
        ui.print_error(str(e))
        return EXIT_HOLO_ERROR
    except Exception as e:
        logger.exception("unexpected failure")
        ui.print_error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
