"""
Run configuration.

A RunConfig bundles one dataclass per subsystem plus the run seed. Values come
from the built-in defaults, then the JSON settings file (merged section by
section), then --<section>.<field> flags on the command line.
"""

from __future__ import annotations

import argparse
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ConfigError
from .inference import DecodeConfig
from .model import ModelConfig
from .noise import NoiseSpec, TaskSpec
from .training import TrainConfig

ROOT = Path(__file__).resolve().parent.parent
DEFAULT_SETTINGS_PATH = ROOT / "data" / "secoco_settings.json"

TRUTHY = {"y", "yes", "true", "1", "apply", "ok"}
FALSY = {"n", "no", "false", "0", "off"}
_NONE = {"none", "null", ""}


@dataclass
class PathsConfig:
    data_dir: str = "runs/data"
    checkpoint_dir: str = "runs/checkpoints"
    report: str = "runs/eval_report.json"


SECTIONS = {
    "task": TaskSpec,
    "noise": NoiseSpec,
    "model": ModelConfig,
    "train": TrainConfig,
    "decode": DecodeConfig,
    "paths": PathsConfig,
}


def md5_text(text: str) -> str:
    return hashlib.md5(text.encode("utf-8", errors="ignore")).hexdigest()


def derive_seed(seed: int, subsystem: str) -> int:
    """Deterministic 32-bit child seed for one subsystem of a run."""
    return int(md5_text(f"{int(seed)}:{subsystem}")[:8], 16)


@dataclass
class RunConfig:
    seed: int = 1
    task: TaskSpec = field(default_factory=TaskSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def derive_seed(self, subsystem: str) -> int:
        own = getattr(getattr(self, subsystem, None), "seed", None)
        return int(own) if own is not None else derive_seed(self.seed, subsystem)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        self.task.validate()
        self.noise.validate()
        self.model.validate()
        self.train.validate()
        self.decode.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def _merge(self, loaded: Dict[str, Any]) -> None:
        for k, v in loaded.items():
            if k == "seed":
                self.seed = _coerce(v, self.seed, "seed")
                continue
            if k not in SECTIONS:
                raise ConfigError(f"unknown settings section {k!r} (expected seed, {', '.join(SECTIONS)})")
            if not isinstance(v, dict):
                raise ConfigError(f"settings section {k!r} must be an object")
            section = getattr(self, k)
            known = {f.name for f in fields(section)}
            for name, value in v.items():
                if name not in known:
                    raise ConfigError(f"unknown setting {k}.{name}")
                setattr(section, name, _coerce(value, getattr(section, name), f"{k}.{name}"))

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "RunConfig":
        run = cls()
        run._merge(obj)
        return run


def _coerce(value: Any, current: Any, name: str) -> Any:
    """Convert a JSON value or a command-line string to the type of the current value."""
    try:
        if isinstance(value, str):
            raw = value.strip()
            low = raw.lower()
            if isinstance(current, bool):
                if low in TRUTHY:
                    return True
                if low in FALSY:
                    return False
                raise ValueError(raw)
            if current is None:
                return None if low in _NONE else int(raw)
            if isinstance(current, int):
                return int(raw)
            if isinstance(current, float):
                return float(raw)
            return raw
        if isinstance(current, bool) and not isinstance(value, bool):
            raise ValueError(value)
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, float) and value.is_integer():
            return int(value)
        return value
    except ValueError:
        raise ConfigError(f"invalid value for {name}: {value!r}") from None


def load_settings(path: Optional[Path] = None) -> RunConfig:
    """Defaults merged with a settings file (the bundled one when `path` is None and it exists)."""
    run = RunConfig()
    if path is None:
        path = DEFAULT_SETTINGS_PATH if DEFAULT_SETTINGS_PATH.exists() else None
    elif not path.exists():
        raise ConfigError(f"Settings file not found: {path}")
    if path is not None:
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: settings must be a JSON object")
        run._merge(loaded)
    return run


# ---------------------------
# Command line
# ---------------------------

def add_override_flags(ap: argparse.ArgumentParser) -> None:
    grp = ap.add_argument_group("settings overrides")
    for section, cls in SECTIONS.items():
        for f in fields(cls):
            grp.add_argument(
                f"--{section}.{f.name}",
                dest=f"ov__{section}__{f.name}",
                default=None,
                metavar="VALUE",
                help=argparse.SUPPRESS,
            )


def apply_overrides(run: RunConfig, args: argparse.Namespace) -> RunConfig:
    loaded: Dict[str, Dict[str, Any]] = {}
    for key, value in vars(args).items():
        if not key.startswith("ov__") or value is None:
            continue
        _, section, name = key.split("__", 2)
        loaded.setdefault(section, {})[name] = value
    if getattr(args, "seed", None) is not None:
        run.seed = int(args.seed)
    run._merge(loaded)
    return run


def settings_from_args(args: argparse.Namespace) -> RunConfig:
    run = load_settings(Path(args.config).expanduser() if getattr(args, "config", None) else None)
    run = apply_overrides(run, args)
    run.validate()
    return run
