#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Error hierarchy shared by every holography module."""
from typing import Optional


class HoloError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HoloError, ValueError):
    """Shapes or channel counts do not agree."""


class RangeError(HoloError, IndexError):
    """A window or depth interval falls outside its allowed range."""


class DomainError(HoloError, ValueError):
    """Input lies outside the domain where the operation is defined."""


class ConfigError(HoloError, ValueError):
    """Invalid configuration or unknown preset."""


class LifecycleError(HoloError, RuntimeError):
    """Operation not allowed in the current object state."""


class FormatError(HoloError, ValueError):
    """Corrupt or truncated binary container."""

    def __init__(self, message: str, offset: Optional[int] = None, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        details = []
        if path:
            details.append(f"file {path}")
        if offset is not None:
            details.append(f"byte offset {offset}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class StageError(HoloError):
    """A pipeline stage failed; carries the stage name and sample id."""

    def __init__(self, stage: str, message: str, sample_id: Optional[str] = None):
        self.stage = stage
        self.sample_id = sample_id
        prefix = f"[{stage}]"
        if sample_id:
            prefix += f" sample {sample_id}:"
        super().__init__(f"{prefix} {message}")
