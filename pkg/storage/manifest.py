#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Dataset manifests: JSON sample records with schema validation."""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from field import HologramRGB
from holo_errors import ConfigError, FormatError
from storage.cvh import load_hologram

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
REQUIRED_FIELDS = ('id', 'lr_path', 'hr_path', 'scale', 'pitch_m', 'depth_max_lr_m', 'depth_max_hr_m', 'split')

PathLike = Union[str, Path]


@dataclass
class ManifestEntry:
    """One LR/HR pair; paths are relative to the manifest directory."""
    id: str
    lr_path: str
    hr_path: str
    scale: int
    pitch_m: float
    depth_max_lr_m: float
    depth_max_hr_m: float
    split: str = 'train'
    depth_map_path: Optional[str] = None
    seed: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ManifestEntry':
        missing = [k for k in REQUIRED_FIELDS if k not in data]
        if missing:
            raise ConfigError(f"manifest record {data.get('id', '?')!r} lacks fields {missing}")
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class PairSample:
    """A manifest entry with its holograms (and HR depth map) loaded."""
    entry: ManifestEntry
    lr: HologramRGB
    hr: HologramRGB
    depth_hr: Optional[np.ndarray]

    @property
    def id(self) -> str:
        return self.entry.id


class Manifest:
    """Validated list of sample records anchored at a directory."""

    def __init__(self, entries: List[ManifestEntry], root: PathLike = '.'):
        self.entries = list(entries)
        self.root = Path(root)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def validate(self, check_files: bool = True):
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ConfigError(f"duplicate sample id {e.id!r} in manifest")
            seen.add(e.id)
            if e.split not in SPLITS:
                raise ConfigError(f"sample {e.id!r}: split {e.split!r} not in {SPLITS}")
            if e.scale < 1:
                raise ConfigError(f"sample {e.id!r}: scale must be >= 1")
            if check_files:
                for rel in (e.lr_path, e.hr_path, e.depth_map_path):
                    if rel is not None and not self.resolve(rel).exists():
                        raise ConfigError(f"sample {e.id!r}: missing file {rel}")

    def load_pair(self, entry: ManifestEntry) -> PairSample:
        lr = load_hologram(self.resolve(entry.lr_path))
        hr = load_hologram(self.resolve(entry.hr_path))
        depth = None
        if entry.depth_map_path:
            depth = np.load(self.resolve(entry.depth_map_path))
        return PairSample(entry, lr, hr, depth)

    def to_dict(self) -> Dict[str, Any]:
        return {'samples': [e.to_dict() for e in self.entries]}


def save_manifest(path: PathLike, manifest: Manifest):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)


def load_manifest(path: PathLike, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}")
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e.msg}", offset=e.pos, path=str(path))
    records = data.get('samples') if isinstance(data, dict) else None
    if not isinstance(records, list):
        raise ConfigError(f"manifest {path} must hold a 'samples' list")
    manifest = Manifest([ManifestEntry.from_dict(r) for r in records], path.parent)
    manifest.validate(check_files)
    logger.info(f"manifest {path}: {len(manifest)} samples")
    return manifest


def split_counts(n: int, ratio=(3800, 100, 100)) -> Dict[str, int]:
    """Proportional train/val/test allocation by largest remainder."""
    total = sum(ratio)
    raw = [n * r / total for r in ratio]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(ratio)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return dict(zip(SPLITS, counts))
