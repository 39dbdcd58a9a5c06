"""Exceptions raised across the suite. Tools catch SecocoError and exit with code 2."""

from __future__ import annotations

from pathlib import Path
from typing import Optional


class SecocoError(Exception):
    pass


class ConfigError(SecocoError):
    pass


class ContractViolation(SecocoError, ValueError):
    """Shape or length mismatch between operands."""


class IntegrityError(SecocoError):
    pass


class InputError(SecocoError):
    pass


class NaNLossError(SecocoError):
    def __init__(self, step: int, dump_path: Optional[Path] = None):
        msg = f"non-finite loss at step {step}"
        if dump_path is not None:
            msg += f", batch dumped to {dump_path}"
        super().__init__(msg)
        self.step = step
        self.dump_path = dump_path
