#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import numpy as np
import pytest

from cvnn.network import CvRdn, build_model, preset
from cvnn.tape import Tape
from cvnn.tensor_ops import direct_cconv2d
from field import ComplexTensor
from holo_errors import ConfigError, DimensionError, DomainError, LifecycleError
from lora import (LORA_PREFIX, adapt, backbone_count, backbone_hash, default_targets, inject,
                  load_adapters, lora_forward, merge, save_adapters, trainable_count)
from training import LossConfig, Trainer, TrainSettings, model_from_checkpoint


def _tensor(rng, shape):
    return ComplexTensor.from_complex(rng.normal(size=shape) + 1j * rng.normal(size=shape))


def _randomize_factors(model, rng, scale=1.0):
    for adapter in model.adapters.values():
        for factor in (adapter.A, adapter.B):
            factor.real[...] = scale * rng.normal(size=factor.shape)
            factor.imag[...] = scale * rng.normal(size=factor.shape)


def test_fresh_adapters_are_transparent(tiny_model, rng):
    x = _tensor(rng, (1, 3, 8, 8))
    before = tiny_model(x)
    inject(tiny_model, r=2)
    after = tiny_model(x)
    np.testing.assert_array_equal(after.real, before.real)
    np.testing.assert_array_equal(after.imag, before.imag)


def test_default_targets(tiny_model):
    targets = default_targets(tiny_model)
    assert targets == ['rdb.0.conv.0', 'rdb.0.conv.1', 'rdb.0.lff',
                       'rdb.1.conv.0', 'rdb.1.conv.1', 'rdb.1.lff']


def test_inject_freezes_backbone(tiny_model):
    inject(tiny_model, r=2)
    trainable = {p.name for p in tiny_model.params.trainable()}
    assert trainable and all(name.startswith(LORA_PREFIX) for name in trainable)


def test_trainable_count_formula(tiny_model):
    r = 3
    inject(tiny_model, r=r)
    expected = 0
    for target in default_targets(tiny_model):
        conv = tiny_model.conv_params(target)
        expected += 2 * r * (conv.in_channels + conv.out_channels)
    assert trainable_count(tiny_model) == expected
    assert backbone_count(tiny_model) == 4262


def test_trainable_share_of_wide_preset():
    model = CvRdn(preset('toy_wide'), seed=0)
    inject(model, r=8)
    assert trainable_count(model) / backbone_count(model) < 0.1


@pytest.mark.parametrize("target", ['rdb.0.lff', 'rdb.0.conv.1'])
def test_dense_equivalence(tiny_model, rng, target):
    conv = tiny_model.conv_params(target)
    r = min(conv.in_channels, conv.out_channels)
    inject(tiny_model, [target], r=r, alpha=2.0)
    adapter = tiny_model.adapters[target]
    _randomize_factors(tiny_model, rng)
    x = _tensor(rng, (1, conv.in_channels, 5, 5))
    y = lora_forward(x, tiny_model, target, adapter).to_complex()
    weight = conv.weight.value().copy()
    kh, kw = weight.shape[2:]
    weight[:, :, kh // 2, kw // 2] += adapter.scale * adapter.B.value() @ adapter.A.value()
    expected = direct_cconv2d(x.to_complex(), weight, conv.bias.value())
    np.testing.assert_allclose(y, expected, atol=1e-12)


def test_factor_gradients(tiny_model, rng, gradcheck):
    target = 'rdb.0.conv.1'
    inject(tiny_model, [target], r=2)
    adapter = tiny_model.adapters[target]
    _randomize_factors(tiny_model, rng)
    x = _tensor(rng, (1, adapter.in_features, 4, 4))
    seed = _tensor(rng, (1, adapter.out_features, 4, 4))
    tape = Tape()
    tape.backward(adapter.apply(x, tape), seed)

    def loss():
        y = adapter.apply(x)
        return float(np.sum(y.real * seed.real) + np.sum(y.imag * seed.imag))

    for factor in (adapter.A, adapter.B):
        grads = tape.param_grads[factor.name]
        for part, array in enumerate((factor.real, factor.imag)):
            idx = gradcheck.pick(rng, array.shape, 12)
            numeric = gradcheck.diff(loss, array, idx, step=1e-6)
            assert gradcheck.error([grads[part][i] for i in idx], numeric) < 1e-5
    idx = gradcheck.pick(rng, x.shape, 12)
    numeric = gradcheck.diff(loss, x.imag, idx, step=1e-6)
    assert gradcheck.error([x.grad.imag[i] for i in idx], numeric) < 1e-5


def test_merge_matches_adapted_outputs(tiny_model, rng):
    inject(tiny_model, r=2)
    _randomize_factors(tiny_model, rng, scale=0.1)
    inputs = [_tensor(rng, (1, 3, 8, 8)) for _ in range(10)]
    adapted = [tiny_model(x).to_complex() for x in inputs]
    merge(tiny_model)
    assert not tiny_model.adapters
    assert not any(name.startswith(LORA_PREFIX) for name in tiny_model.params.names())
    merged = [tiny_model(x).to_complex() for x in inputs]
    assert max(np.max(np.abs(a - b)) for a, b in zip(adapted, merged)) < 1e-10


def test_lifecycle_errors(tiny_model):
    with pytest.raises(LifecycleError):
        merge(tiny_model)
    inject(tiny_model, ['rdb.0.lff'], r=2)
    with pytest.raises(LifecycleError):
        inject(tiny_model, ['rdb.0.lff'], r=2)
    merge(tiny_model)
    with pytest.raises(LifecycleError):
        merge(tiny_model)


def test_invalid_targets_and_rank(tiny_model):
    with pytest.raises(ConfigError):
        inject(tiny_model, ['rdb.9.lff'])
    with pytest.raises(DimensionError):
        inject(tiny_model, ['rdb.0.conv.0'], r=5)


def test_adapter_file_round_trip(tmp_path, rng):
    model = CvRdn(preset('tiny'), seed=3)
    inject(model, r=2)
    _randomize_factors(model, rng, scale=0.1)
    path = tmp_path / 'adapters.cvl'
    save_adapters(path, model)
    restored = load_adapters(path, CvRdn(preset('tiny'), seed=3))
    assert sorted(restored.adapters) == sorted(model.adapters)
    x = _tensor(rng, (1, 3, 8, 8))
    np.testing.assert_allclose(restored(x).to_complex(), model(x).to_complex(), rtol=1e-5, atol=1e-5)


def _adapt_settings(**overrides):
    base = dict(epochs=0, batch=1, crop_lr=8, lr=1e-3, seed=0)
    base.update(overrides)
    return TrainSettings(**base)


def test_adapt_without_steps_changes_nothing(tiny_model, make_samples):
    train = make_samples(3, seed=20)
    val = make_samples(1, seed=40)
    report = adapt(tiny_model, train, val, _adapt_settings(), LossConfig(lam=0.0),
                   n_samples=2, r=2, eval_planes=2)
    assert report.n_samples == 2
    assert report.backbone_intact
    assert report.adapted_psnr == report.frozen_psnr
    assert report.gain_db == 0.0
    assert report.to_dict()['trainable_ratio'] == pytest.approx(trainable_count(tiny_model) / 4262)


def test_adapt_trains_only_adapters(tiny_model, make_samples):
    train = make_samples(2, seed=20)
    val = make_samples(1, seed=40)
    before = backbone_hash(tiny_model)
    report = adapt(tiny_model, train, val, _adapt_settings(epochs=1, steps_per_epoch=1),
                   LossConfig(lam=0.5, n_planes=2), n_samples=2, r=2, eval_planes=2)
    assert report.backbone_intact
    assert backbone_hash(tiny_model) == before
    assert any(np.any(a.B.real) or np.any(a.B.imag) for a in tiny_model.adapters.values())
    assert len(report.history) == 1


def test_adapt_rejects_empty_set(tiny_model):
    with pytest.raises(ConfigError):
        adapt(tiny_model, [], [], _adapt_settings(), LossConfig())


class TestDepthRangeGuard:
    def test_same_range_as_pretraining_is_rejected(self, tiny_model, make_samples):
        base = make_samples(2, seed=20, fraction=0.5)
        Trainer(tiny_model, LossConfig(lam=0.0), _adapt_settings(epochs=1, steps_per_epoch=1)).train(base)
        assert tiny_model.depth_max_hr == pytest.approx(base[0].entry.depth_max_hr_m)
        with pytest.raises(DomainError):
            adapt(tiny_model, make_samples(2, seed=30, fraction=0.5), make_samples(1, seed=40),
                  _adapt_settings(), LossConfig(lam=0.0), n_samples=2, r=2, eval_planes=2)
        assert not tiny_model.adapters

    def test_shifted_range_is_accepted(self, tiny_model, make_samples):
        base = make_samples(2, seed=20, fraction=0.5)
        Trainer(tiny_model, LossConfig(lam=0.0), _adapt_settings(epochs=1, steps_per_epoch=1)).train(base)
        report = adapt(tiny_model, make_samples(2, seed=30, fraction=0.75), make_samples(1, seed=40),
                       _adapt_settings(), LossConfig(lam=0.0), n_samples=2, r=2, eval_planes=2)
        assert report.n_samples == 2
        assert tiny_model.depth_max_hr == pytest.approx(base[0].entry.depth_max_hr_m)

    def test_range_survives_checkpoint(self, tmp_path, tiny_model, make_samples):
        base = make_samples(2, seed=20, fraction=0.5)
        trainer = Trainer(tiny_model, LossConfig(lam=0.0), _adapt_settings(epochs=1, steps_per_epoch=1))
        trainer.train(base)
        trainer.save(tmp_path / 'base.cvw')
        restored = model_from_checkpoint(tmp_path / 'base.cvw')
        assert restored.depth_max_hr == pytest.approx(base[0].entry.depth_max_hr_m)
        with pytest.raises(DomainError):
            adapt(restored, base, base, _adapt_settings(), LossConfig(lam=0.0), n_samples=2, r=2)


def test_real_network_takes_no_adapters():
    with pytest.raises(ConfigError):
        inject(build_model(preset('real_tiny'), seed=0), r=1)
