#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Settings file handling, run configurations and worker-count resolution."""
import copy
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from cvnn.network import CvRdnConfig, preset
from holo_errors import ConfigError, FormatError
from training import LossConfig, TrainSettings

logger = logging.getLogger(__name__)

WORKERS_ENV = 'HOLO_WORKERS'


class HoloSettings:
    """Load and save config.json; dotted-path lookups."""

    def __init__(self, config_path: str = 'config.json'):
        self.config_path = Path(config_path)
        self.load_config()

    def load_config(self):
        """Load configuration from file, writing the defaults if it is missing."""
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                self.config = json.load(f)
        except FileNotFoundError:
            self.config = self._get_default_config()
            self.save_config()
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid settings JSON: {e.msg}", offset=e.pos, path=str(self.config_path))

    def save_config(self):
        with open(self.config_path, 'w', encoding='utf-8') as f:
            json.dump(self.config, f, indent=2, ensure_ascii=False)

    @staticmethod
    def _get_default_config() -> Dict[str, Any]:
        return copy.deepcopy(DEFAULT_SETTINGS)

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.config
        for key in dotted.split('.'):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def section(self, name: str) -> Dict[str, Any]:
        return dict(self.get(name, {}) or {})


DEFAULT_SETTINGS: Dict[str, Any] = {
    "optics": {
        "pitch_m": 3.6e-6,
        "wavelengths_m": [638e-9, 532e-9, 450e-9],
        "pad_factor": 2.0,
        "band_limited": True,
        "cache_transfers": True,
    },
    "dataset": {
        "lr_resolution": 256,
        "scale": 4,
        "n_primitives": 6,
        "split_ratio": [3800, 100, 100],
    },
    "network": {"preset": "full"},
    "loss": {"lambda": 1.0, "n_planes": 4, "metric": "multiscale_gradient"},
    "optimizer": {"lr": 4e-4, "betas": [0.9, 0.99], "weight_decay": 1e-5, "eps": 1e-8},
    "training": {"epochs": 1, "batch": 8, "crop_lr": 64, "precision": "float64", "seed": 0},
    "lora": {"rank": 8, "alpha": 16.0, "n_samples": 50},
    "analysis": {"n_planes": 40, "k": 3, "focus_wavelength_m": 532e-9},
    "demo": {"smoke": {}, "demo": {}, "acceptance": {}},
    "logging": {"level": "INFO", "file": "holo_debug.log"},
    "workers": 1,
}


def network_config(spec: Any) -> CvRdnConfig:
    """A preset name, or a dict with an optional 'preset' key plus overrides."""
    if isinstance(spec, CvRdnConfig):
        return spec
    if isinstance(spec, str):
        return preset(spec)
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop('preset', None)
        return preset(name, **spec) if name else CvRdnConfig.from_dict(spec)
    raise ConfigError(f"cannot build a network config from {spec!r}")


@dataclass
class RunConfig:
    """Everything a training or adaptation run needs."""
    network: CvRdnConfig
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    seed: int = 0
    out_dir: str = 'runs'
    checkpoint: str = 'model.cvw'
    log_csv: str = 'train_log.csv'

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        seed = int(data.get('seed', data.get('training', {}).get('seed', 0)))
        train = {**data.get('optimizer', {}), **data.get('training', {}), 'seed': seed}
        paths = data.get('paths', {})
        return cls(network=network_config(data.get('network', 'full')),
                   loss=LossConfig.from_dict(data.get('loss', {})),
                   train=TrainSettings.from_dict(train),
                   seed=seed,
                   out_dir=paths.get('out_dir', 'runs'),
                   checkpoint=paths.get('checkpoint', 'model.cvw'),
                   log_csv=paths.get('log_csv', 'train_log.csv'))

    @classmethod
    def from_settings(cls, settings: HoloSettings, **overrides) -> 'RunConfig':
        data = copy.deepcopy(settings.config)
        for key, value in overrides.items():
            if value is not None:
                data[key] = value
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path, settings: Optional[HoloSettings] = None, **overrides) -> 'RunConfig':
        """Sections of a run file (network, loss, optimizer, training, ...) over the settings."""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except FileNotFoundError:
            raise ConfigError(f"run config {path} not found")
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid run config JSON: {e.msg}", offset=e.pos, path=str(path))
        if not isinstance(data, dict):
            raise ConfigError(f"run config {path} must hold a JSON object")
        base = copy.deepcopy(settings.config) if settings is not None else {}
        base.update(data)
        for key, value in overrides.items():
            if value is not None:
                base[key] = value
        return cls.from_dict(base)

    def checkpoint_path(self) -> Path:
        return Path(self.out_dir) / self.checkpoint

    def to_dict(self) -> Dict[str, Any]:
        return {'network': self.network.to_dict(), 'loss': self.loss.to_dict(),
                'training': self.train.to_dict(), 'seed': self.seed,
                'paths': {'out_dir': self.out_dir, 'checkpoint': self.checkpoint, 'log_csv': self.log_csv}}


def resolve_workers(flag: Optional[int] = None, settings: Optional[HoloSettings] = None) -> int:
    """--workers flag, then HOLO_WORKERS (after .env), then config.json, then 1."""
    if flag is not None:
        value, source = flag, '--workers'
    else:
        load_dotenv()
        env = os.getenv(WORKERS_ENV)
        if env:
            value, source = env, WORKERS_ENV
        elif settings is not None and settings.get('workers') is not None:
            value, source = settings.get('workers'), 'config.json'
        else:
            return 1
    try:
        workers = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: worker count must be an integer, got {value!r}")
    if workers < 1:
        raise ConfigError(f"{source}: worker count must be at least 1, got {workers}")
    return workers
