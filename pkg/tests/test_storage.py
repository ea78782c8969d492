#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import csv
import json

import numpy as np
import pytest
from PIL import Image

from field import ComplexField, HologramRGB
from holo_errors import ConfigError, DimensionError, FormatError
from storage.checkpoint import (decode_adapters, decode_weights, encode_adapters, encode_weights,
                                load_adapters_file, load_checkpoint, load_state, save_adapters,
                                save_checkpoint, save_state, sidecar_path, state_path)
from storage.cvh import decode_fields, encode_fields, load_hologram, save_hologram
from storage.images import load_uint16_png, save_montage, save_uint16_png, write_csv
from storage.manifest import Manifest, ManifestEntry, load_manifest, save_manifest, split_counts


def f32_hologram(rng, shape=(5, 7)):
    data = (rng.normal(size=(3,) + shape) + 1j * rng.normal(size=(3,) + shape)).astype(np.complex64)
    return HologramRGB.from_array(data.astype(np.complex128), pitch=4.0e-6)


class TestCvh:
    def test_round_trip_is_exact_for_f32_data(self, rng, tmp_path):
        holo = f32_hologram(rng)
        save_hologram(tmp_path / 'a.cvh', holo)
        back = load_hologram(tmp_path / 'a.cvh')
        np.testing.assert_array_equal(back.as_array(), holo.as_array())
        assert back.pitch == 4.0e-6
        assert back.wavelengths == holo.wavelengths

    def test_header_layout(self, rng):
        blob = encode_fields(list(f32_hologram(rng)))
        assert blob[:4] == b'CVH1'
        assert len(blob) == 4 + 12 + 8 + 3 * 8 + 3 * 5 * 7 * 8

    def test_bad_magic(self, rng):
        blob = b'XXXX' + encode_fields(list(f32_hologram(rng)))[4:]
        with pytest.raises(FormatError) as info:
            decode_fields(blob)
        assert info.value.offset == 0

    def test_truncated_payload(self, rng):
        blob = encode_fields(list(f32_hologram(rng)))
        with pytest.raises(FormatError) as info:
            decode_fields(blob[:-3])
        assert info.value.offset == len(blob) - 3

    def test_single_channel_is_not_a_colour_hologram(self, tmp_path):
        path = tmp_path / 'mono.cvh'
        path.write_bytes(encode_fields([ComplexField(np.ones((2, 2)), 1e-6, 5e-7)]))
        with pytest.raises(FormatError):
            load_hologram(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            load_hologram(tmp_path / 'absent.cvh')

    def test_mixed_shapes(self):
        a = ComplexField(np.ones((2, 2)), 1e-6, 5e-7)
        b = ComplexField(np.ones((2, 3)), 1e-6, 5e-7)
        with pytest.raises(DimensionError):
            encode_fields([a, b])


class TestCheckpoint:
    def test_weights_round_trip(self, rng):
        pairs = [('conv.w', rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 1, 3, 3))),
                 ('conv.b', rng.normal(size=(2,)), rng.normal(size=(2,)))]
        back = decode_weights(encode_weights(pairs))
        assert [name for name, _, _ in back] == ['conv.w', 'conv.b']
        for (_, r, i), (_, r2, i2) in zip(pairs, back):
            np.testing.assert_array_equal(r2, r.astype(np.float32))
            np.testing.assert_array_equal(i2, i.astype(np.float32))

    def test_weights_bad_magic_and_trailing_bytes(self, rng):
        blob = encode_weights([('x', np.ones(2), np.zeros(2))])
        with pytest.raises(FormatError) as info:
            decode_weights(b'CVL1' + blob[4:])
        assert info.value.offset == 0
        with pytest.raises(FormatError):
            decode_weights(blob + b'\0')
        with pytest.raises(FormatError):
            decode_weights(blob[:-1])

    def test_store_checkpoint_with_sidecar(self, tiny_model, tmp_path):
        path = tmp_path / 'm.cvw'
        save_checkpoint(path, tiny_model.params, {'epoch': 3})
        assert sidecar_path(path).name == 'm.cvw.json'
        pairs, meta = load_checkpoint(path)
        assert meta['epoch'] == 3
        assert [name for name, _, _ in pairs] == [p.name for p in tiny_model.params]

    def test_adapters_round_trip(self, rng, tmp_path):
        adapters = [{'target': 'rdb.0.lff', 'rank': 2, 'alpha': 4.0,
                     'A': (rng.normal(size=(2, 6)) + 1j * rng.normal(size=(2, 6))).astype(np.complex64),
                     'B': np.zeros((3, 2), dtype=np.complex64)}]
        save_adapters(tmp_path / 'a.cvl', adapters)
        back = load_adapters_file(tmp_path / 'a.cvl')
        assert back[0]['target'] == 'rdb.0.lff' and back[0]['rank'] == 2 and back[0]['alpha'] == 4.0
        np.testing.assert_array_equal(back[0]['A'], adapters[0]['A'])
        assert decode_adapters(encode_adapters([])) == []

    def test_state_round_trip(self, rng, tmp_path):
        path = state_path(tmp_path / 'm.cvw')
        assert path.name == 'm.cvw.state.npz'
        arrays = {'w.real': rng.normal(size=(3, 3))}
        save_state(path, arrays, {'step': 7, 'epoch': 1})
        back, meta = load_state(path)
        np.testing.assert_array_equal(back['w.real'], arrays['w.real'])
        assert meta == {'epoch': 1, 'step': 7}
        with pytest.raises(FormatError):
            load_state(tmp_path / 'none.npz')


def entry(id_='a', split='train', **extra):
    data = dict(id=id_, lr_path=f'lr/{id_}.cvh', hr_path=f'hr/{id_}.cvh', scale=2, pitch_m=3.6e-6,
                depth_max_lr_m=1e-3, depth_max_hr_m=2e-3, split=split)
    data.update(extra)
    return ManifestEntry.from_dict(data)


class TestManifest:
    def test_missing_fields(self):
        with pytest.raises(ConfigError, match='lacks fields'):
            ManifestEntry.from_dict({'id': 'a', 'lr_path': 'x'})

    def test_unknown_fields_are_ignored(self):
        assert entry(comment='ok').id == 'a'

    def test_duplicate_ids(self):
        with pytest.raises(ConfigError, match='duplicate'):
            Manifest([entry('a'), entry('a')]).validate(check_files=False)

    def test_bad_split(self):
        with pytest.raises(ConfigError):
            Manifest([entry(split='holdout')]).validate(check_files=False)

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigError, match='missing file'):
            Manifest([entry()], tmp_path).validate()

    def test_save_and_load(self, tmp_path):
        manifest = Manifest([entry('a'), entry('b', 'val', seed=5)])
        save_manifest(tmp_path / 'manifest.json', manifest)
        back = load_manifest(tmp_path / 'manifest.json', check_files=False)
        assert [e.id for e in back] == ['a', 'b']
        assert back.split('val')[0].seed == 5
        assert back.root == tmp_path
        assert 'depth_map_path' not in json.loads((tmp_path / 'manifest.json').read_text())['samples'][0]

    def test_load_pair(self, rng, tmp_path):
        save_hologram(tmp_path / 'lr/a.cvh', f32_hologram(rng, (2, 2)))
        save_hologram(tmp_path / 'hr/a.cvh', f32_hologram(rng, (4, 4)))
        np.save(tmp_path / 'a.npy', np.zeros((4, 4)))
        manifest = Manifest([entry(depth_map_path='a.npy')], tmp_path)
        manifest.validate()
        pair = manifest.load_pair(manifest.entries[0])
        assert pair.id == 'a' and pair.hr.shape == (4, 4) and pair.depth_hr.shape == (4, 4)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'manifest.json'
        path.write_text('{"samples": [')
        with pytest.raises(FormatError) as info:
            load_manifest(path)
        assert info.value.offset is not None

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError):
            load_manifest(tmp_path / 'manifest.json')

    @pytest.mark.parametrize("n, ratio, expected", [
        (4000, (3800, 100, 100), (3800, 100, 100)),
        (7, (1, 1, 1), (3, 2, 2)),
        (3, (2, 1, 0), (2, 1, 0)),
    ])
    def test_split_counts(self, n, ratio, expected):
        counts = split_counts(n, ratio)
        assert (counts['train'], counts['val'], counts['test']) == expected


class TestImages:
    def test_uint16_round_trip(self, tmp_path):
        raster = np.array([[0, 1, 65535], [32768, 12345, 7]], dtype=np.uint16)
        save_uint16_png(tmp_path / 'phase.png', raster)
        np.testing.assert_array_equal(load_uint16_png(tmp_path / 'phase.png'), raster)

    def test_uint16_requires_16_bit_raster(self, tmp_path):
        with pytest.raises(DimensionError):
            save_uint16_png(tmp_path / 'x.png', np.zeros((2, 2)))

    def test_montage_tiles_planes(self, tmp_path):
        stack = np.random.default_rng(0).uniform(size=(5, 3, 4, 6))
        save_montage(tmp_path / 'm.png', stack, cols=2)
        with Image.open(tmp_path / 'm.png') as im:
            assert im.size == (12, 12)
            assert im.mode == 'RGB'

    def test_write_csv(self, tmp_path):
        write_csv(tmp_path / 'out/rows.csv', [{'plane': 0, 'psnr_db': 1 / 3}, {'plane': 'mean', 'psnr_db': 2.0}])
        with open(tmp_path / 'out/rows.csv', newline='') as f:
            rows = list(csv.DictReader(f))
        assert rows[0] == {'plane': '0', 'psnr_db': '0.3333333333'}
        assert rows[1]['plane'] == 'mean'
