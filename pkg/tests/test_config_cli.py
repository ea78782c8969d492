#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import csv
import json
import logging

import numpy as np
import pytest
from PIL import Image

import holo_config
from cvnn.network import CvRdnConfig, preset
from holo_config import DEFAULT_SETTINGS, HoloSettings, RunConfig, network_config, resolve_workers
from holo_errors import ConfigError, FormatError
from launch_holo import EXIT_HOLO_ERROR, main
from storage import checkpoint as ckpt
from storage import cvh
from storage.images import load_uint16_png, save_amplitude_png
from storage.manifest import load_manifest
from training import model_from_checkpoint


@pytest.fixture
def settings_path(tmp_path):
    return tmp_path / 'config.json'


class TestSettings:
    def test_defaults_written_when_missing(self, settings_path):
        settings = HoloSettings(str(settings_path))
        assert settings_path.exists()
        assert json.loads(settings_path.read_text()) == DEFAULT_SETTINGS
        assert settings.get('optics.pitch_m') == 3.6e-6
        assert settings.get('optics.missing', 'fallback') == 'fallback'
        assert settings.get('workers.nested') is None
        assert settings.section('lora')['rank'] == 8

    def test_defaults_are_not_shared(self, tmp_path):
        a = HoloSettings(str(tmp_path / 'a.json'))
        a.config['optics']['pitch_m'] = 1.0
        assert HoloSettings(str(tmp_path / 'b.json')).get('optics.pitch_m') == 3.6e-6

    def test_invalid_json(self, settings_path):
        settings_path.write_text('{"optics": ')
        with pytest.raises(FormatError) as info:
            HoloSettings(str(settings_path))
        assert info.value.offset is not None


class TestRunConfig:
    def test_network_config_forms(self):
        assert network_config('tiny') == preset('tiny')
        assert network_config({'preset': 'tiny', 'scale': 4}).scale == 4
        cfg = preset('tiny')
        assert network_config(cfg) is cfg
        assert network_config(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            network_config(3)

    def test_from_settings(self, settings_path):
        run = RunConfig.from_settings(HoloSettings(str(settings_path)), network='tiny')
        assert run.network == preset('tiny')
        assert run.train.lr == 4e-4 and run.train.betas == (0.9, 0.99)
        assert run.loss.lam == 1.0 and run.loss.metric == 'multiscale_gradient'
        assert run.checkpoint_path().as_posix() == 'runs/model.cvw'
        assert RunConfig.from_dict(run.to_dict()).network == run.network

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({'network': 'enormous'})

    def test_default_network_is_full(self):
        assert isinstance(RunConfig.from_dict({}).network, CvRdnConfig)


class TestWorkers:
    @pytest.fixture(autouse=True)
    def clean_env(self, monkeypatch):
        monkeypatch.delenv('HOLO_WORKERS', raising=False)
        monkeypatch.setattr(holo_config, 'load_dotenv', lambda: False)

    def test_precedence(self, settings_path, monkeypatch):
        settings = HoloSettings(str(settings_path))
        settings.config['workers'] = 3
        assert resolve_workers(None, None) == 1
        assert resolve_workers(None, settings) == 3
        monkeypatch.setenv('HOLO_WORKERS', '5')
        assert resolve_workers(None, settings) == 5
        assert resolve_workers(2, settings) == 2

    @pytest.mark.parametrize("value", ['zero', '0', '-2'])
    def test_invalid_env(self, monkeypatch, value):
        monkeypatch.setenv('HOLO_WORKERS', value)
        with pytest.raises(ConfigError, match='HOLO_WORKERS'):
            resolve_workers()

    def test_invalid_flag(self):
        with pytest.raises(ConfigError, match='--workers'):
            resolve_workers(0)


@pytest.fixture
def cli(tmp_path, monkeypatch, settings_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv('HOLO_WORKERS', raising=False)
    monkeypatch.setattr(holo_config, 'load_dotenv', lambda: False)

    def run(*argv):
        return main(['--config', str(settings_path), '--quiet', *map(str, argv)])
    yield run
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, logging.FileHandler):
            handler.close()
            root.removeHandler(handler)


class TestCli:
    def test_depth_table(self, cli, tmp_path):
        assert cli('depth-table', '--resolutions', 256, 1024, '--csv', tmp_path / 'table.csv') == 0
        rows = _rows(tmp_path / 'table.csv')
        assert [r['resolution'] for r in rows] == ['256', '1024']
        assert float(rows[0]['scene_depth_m']) == pytest.approx(1.8432e-3)
        assert (tmp_path / 'holo_debug.log').exists()

    def test_holo_errors_map_to_exit_code(self, cli, tmp_path):
        assert cli('upsample', '--input', tmp_path / 'missing.cvh', '--out', tmp_path / 'x.cvh',
                   '--scale', 2) == EXIT_HOLO_ERROR
        assert cli('pipeline-demo', '--preset', 'nope', '--out', tmp_path / 'demo') == EXIT_HOLO_ERROR
        assert cli('--workers', 0, 'depth-table') == EXIT_HOLO_ERROR

    def test_upsample_method_needs_its_inputs(self, cli, tmp_path, random_hologram):
        path = tmp_path / 'h.cvh'
        cvh.save_hologram(path, random_hologram((4, 4)))
        assert cli('upsample', '--input', path, '--out', tmp_path / 'a.cvh',
                   '--method', 'network') == EXIT_HOLO_ERROR
        assert cli('upsample', '--input', path, '--out', tmp_path / 'b.cvh') == EXIT_HOLO_ERROR

    def test_generate_upsample_encode(self, cli, tmp_path):
        data = tmp_path / 'data'
        assert cli('generate', '--out-dir', data, '--count', 2, '--lr-res', 8, '--scale', 2,
                   '--pitch', 4e-6, '--layers', 4, '--primitives', 2, '--seed', 7) == 0
        manifest = load_manifest(data / 'manifest.json')
        assert [e.id for e in manifest] == ['sample_00000', 'sample_00001']
        assert all(e.pitch_m == 4e-6 for e in manifest)
        assert manifest.entries[0].depth_max_lr_m == pytest.approx(2 * 8 * 4e-6)
        assert json.loads((data / 'splits.json').read_text())['train'] == ['sample_00000', 'sample_00001']
        assert (data / 'meta' / 'sample_00000.json').exists()

        lr = data / 'lr' / 'sample_00000.cvh'
        assert cli('upsample', '--input', lr, '--out', tmp_path / 'up.cvh', '--method', 'bicubic',
                   '--scale', 2, '--calibrate') == 0
        assert cvh.load_hologram(tmp_path / 'up.cvh').shape == (16, 16)
        sidecar = json.loads((tmp_path / 'up.cvh.json').read_text())
        assert sidecar['calibration'] == 'calibrated' and sidecar['scale'] == 2
        assert sidecar['method'] == 'bicubic'

        assert cli('encode-dpm', '--input', tmp_path / 'up.cvh', '--out', tmp_path / 'enc', '--dz', 0.1) == 0
        raster = load_uint16_png(tmp_path / 'enc' / 'phase_green.png')
        assert raster.shape == (16, 16) and raster.dtype == np.uint16
        assert json.loads((tmp_path / 'enc' / 'encode.json').read_text())['dz'] == pytest.approx(1e-4)


class TestPropagateCli:
    @pytest.fixture
    def holo_path(self, tmp_path, random_hologram):
        path = tmp_path / 'h.cvh'
        cvh.save_hologram(path, random_hologram((8, 8)))
        return path

    def test_planes_written_per_distance(self, cli, tmp_path, holo_path):
        out = tmp_path / 'planes'
        assert cli('propagate', '--input', holo_path, '--z', 0, '--z', -0.01, 0.02, '--out-dir', out) == 0
        planes = [cvh.load_hologram(out / f"plane_{i:03d}.cvh") for i in range(3)]
        assert all(p.shape == (8, 8) for p in planes)
        assert not (out / 'plane_003.cvh').exists()
        assert not (out / 'montage.png').exists()
        np.testing.assert_allclose(planes[0].as_array(), cvh.load_hologram(holo_path).as_array(), atol=1e-9)

    def test_millimetre_distances(self, cli, tmp_path, holo_path):
        from propagation import propagate
        out = tmp_path / 'planes'
        assert cli('propagate', '--input', holo_path, '--z', 0.5, '--out-dir', out) == 0
        holo = cvh.load_hologram(holo_path)
        expected = propagate(holo.channels[1], 0.5e-3).data
        np.testing.assert_allclose(cvh.load_hologram(out / 'plane_000.cvh').channels[1].data, expected,
                                   atol=1e-12)

    def test_png_and_energy_table(self, cli, tmp_path, holo_path):
        out = tmp_path / 'planes'
        table = tmp_path / 'energy.csv'
        assert cli('propagate', '--input', holo_path, '--z', 0, 0.01, '--out-dir', out,
                   '--png', '--csv', table) == 0
        for name in ('plane_000.png', 'plane_001.png', 'montage.png'):
            assert (out / name).exists(), name
        rows = _rows(table)
        assert [float(r['z_m']) for r in rows] == pytest.approx([0.0, 1e-5])
        holo = cvh.load_hologram(holo_path)
        for column, ch in zip(('energy_red', 'energy_green', 'energy_blue'), holo):
            assert float(rows[0][column]) == pytest.approx(np.sum(np.abs(ch.data) ** 2), rel=1e-6)
        parts = sum(float(rows[0][c]) for c in ('energy_red', 'energy_green', 'energy_blue'))
        assert float(rows[0]['energy']) == pytest.approx(parts)

    def test_input_is_required(self, cli, tmp_path):
        with pytest.raises(SystemExit):
            cli('propagate', '--z', 0, '--out-dir', tmp_path / 'planes')


class TestEvalCli:
    def test_eval_against_itself(self, cli, tmp_path, random_hologram):
        path = tmp_path / 'h.cvh'
        cvh.save_hologram(path, random_hologram((12, 12)))
        out = tmp_path / 'planes.csv'
        sweep = tmp_path / 'sweep.png'
        assert cli('eval', '--pred', path, '--gt', path, '--planes', 3, '--z-max', 0.1,
                   '--csv', out, '--png', sweep) == 0
        rows = _rows(out)
        assert rows[-1]['plane'] == 'mean' and float(rows[-1]['psnr_db']) == 99.0
        assert float(rows[2]['z_m']) == pytest.approx(1e-4)
        with Image.open(sweep) as im:
            assert im.size == (3 * 12, 2 * 12)

    def test_calibrate_scale(self, cli, tmp_path, random_hologram):
        path = tmp_path / 'h.cvh'
        cvh.save_hologram(path, random_hologram((8, 8)))
        assert cli('eval', '--pred', path, '--gt', path, '--planes', 2, '--z-max', 0.05,
                   '--calibrate', 2) == 0
        assert cli('eval', '--pred', path, '--gt', path, '--planes', 2, '--z-max', 0.05,
                   '--calibrate', 0.5) == EXIT_HOLO_ERROR


class TestAnalyzeFocusCli:
    @pytest.fixture
    def reference(self, tmp_path):
        path = tmp_path / 'ref.png'
        save_amplitude_png(path, np.random.default_rng(3).random((8, 8)))
        return path

    def test_hologram_input(self, cli, tmp_path, random_hologram, reference):
        path = tmp_path / 'h.cvh'
        cvh.save_hologram(path, random_hologram((8, 8)))
        table = tmp_path / 'focus.csv'
        assert cli('analyze-focus', '--input', path, '--ref', reference, '--z-min', 0.02, '--z-max', 0.1,
                   '--steps', 5, '--k', 2, '--csv', table) == 0
        z = [float(r['z_m']) for r in _rows(table)]
        assert z == pytest.approx(np.linspace(2e-5, 1e-4, 5).tolist())

    def test_feature_dump_input(self, cli, tmp_path, random_hologram, reference):
        dump = tmp_path / 'features.npy'
        np.save(dump, random_hologram((8, 8)).as_array())
        table = tmp_path / 'focus.csv'
        assert cli('analyze-focus', '--input', dump, '--ref', reference, '--z-max', 0.05,
                   '--steps', 4, '--csv', table) == 0
        assert len(_rows(table)) == 4

    def test_feature_dump_rank(self, cli, tmp_path, reference):
        dump = tmp_path / 'features.npy'
        np.save(dump, np.zeros((1, 2, 8, 8), dtype=np.complex128))
        assert cli('analyze-focus', '--input', dump, '--ref', reference, '--steps', 4) == EXIT_HOLO_ERROR


class TestTrainAdaptCli:
    @pytest.fixture
    def datasets(self, cli, tmp_path):
        for name, fraction in (('base', 1.0), ('shifted', 0.5)):
            assert cli('generate', '--out-dir', tmp_path / name, '--count', 2, '--lr-res', 8, '--scale', 2,
                       '--layers', 4, '--primitives', 2, '--depth-fraction', fraction, '--seed', 1) == 0
        run_file = tmp_path / 'run.json'
        run_file.write_text(json.dumps({'network': 'tiny', 'loss': {'n_planes': 2},
                                        'training': {'epochs': 1, 'steps_per_epoch': 1, 'batch': 1,
                                                     'crop_lr': 8}}))
        return tmp_path / 'base' / 'manifest.json', tmp_path / 'shifted' / 'manifest.json', run_file

    def test_train_then_adapt(self, cli, tmp_path, datasets):
        base, shifted, run_file = datasets
        model_path, log = tmp_path / 'model.cvw', tmp_path / 'logs' / 'train.csv'
        assert cli('train', '--manifest', base, '--config', run_file, '--out', model_path, '--log', log) == 0
        assert log.exists() and not model_path.with_suffix('.csv').exists()
        model = model_from_checkpoint(model_path)
        assert model.config.n_blocks == preset('tiny').n_blocks and model.config.scale == 2

        adapters = tmp_path / 'adapters.cvl'
        assert cli('adapt', '--manifest', shifted, '--base-checkpoint', model_path, '--config', run_file,
                   '--out', adapters, '--samples', 1, '--rank', 1, '--eval-planes', 2) == 0
        sidecar = json.loads(ckpt.sidecar_path(adapters).read_text())
        assert sidecar['n_samples'] == 1 and sidecar['rank'] == 1
        assert sidecar['backbone'] == str(model_path)

    def test_adapt_on_training_range_fails(self, cli, tmp_path, datasets):
        base, _, run_file = datasets
        model_path = tmp_path / 'model.cvw'
        assert cli('train', '--manifest', base, '--config', run_file, '--out', model_path) == 0
        assert model_path.with_suffix('.csv').exists()
        assert cli('adapt', '--manifest', base, '--base-checkpoint', model_path, '--config', run_file,
                   '--out', tmp_path / 'a.cvl', '--samples', 1, '--rank', 1) == EXIT_HOLO_ERROR

    def test_missing_run_file(self, cli, tmp_path, datasets):
        base, _, _ = datasets
        assert cli('train', '--manifest', base, '--config', tmp_path / 'none.json',
                   '--out', tmp_path / 'm.cvw') == EXIT_HOLO_ERROR


def _rows(path):
    with open(path, newline='') as f:
        return list(csv.DictReader(f))
