"""Run configuration: flat ``key = value`` files with typed, validated fields."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .network import ABLATIONS

# fields whose default is a reduced desk-scale value, with the full-scale value
DESK_OVERRIDES = {"epochs": 50, "batch_size": 64, "patch_count": 150000}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config.{field}: {message}")
        self.field = field


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 5e-4
    weight_decay: float = 1e-5
    clip_norm: float = 5.0
    alpha: float = 0.5
    patch_count: int = 2000
    patch_size: int = 64
    stride: int = 8
    val_fraction: float = 0.1
    patience: int = 10
    seed: int = 0
    ablation: str = "H"
    base_channels: int = 16
    data_source: str = "synthetic"
    layout: str = "flat"
    synth_train_images: int = 40
    synth_eval_images: int = 50
    synth_image_size: int = 96
    threshold: float = 0.5
    precision: str = "float32"
    augment: bool = True
    clahe_tiles: int = 8
    clahe_clip: float = 2.0
    gamma: float = 1.2
    eval_batch: int = 25

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("epochs", "batch_size", "patch_size", "stride", "patience", "base_channels",
                    "synth_train_images", "synth_eval_images", "eval_batch", "clahe_tiles")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        for name in ("lr", "clip_norm", "gamma", "clahe_clip"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be > 0, got {getattr(self, name)}")
        if self.patch_count < 0:
            raise ConfigError("patch_count", "must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be >= 0")
        for name in ("alpha", "threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(name, f"must lie in [0, 1], got {getattr(self, name)}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction", f"must lie in [0, 1), got {self.val_fraction}")
        if self.ablation.upper() not in ABLATIONS:
            raise ConfigError("ablation", f"unknown configuration {self.ablation!r}; choose from {sorted(ABLATIONS)}")
        self.ablation = self.ablation.upper()
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision", f"must be float32 or float64, got {self.precision!r}")
        if self.layout not in ("drive", "stare", "chase", "flat"):
            raise ConfigError("layout", f"unknown layout {self.layout!r}")
        if self.patch_size % 32:
            raise ConfigError("patch_size", f"must be a multiple of 32, got {self.patch_size}")
        if self.synth_image_size < self.patch_size:
            raise ConfigError("synth_image_size", "must be at least patch_size")

    @property
    def synthetic(self) -> bool:
        return self.data_source == "synthetic"

    def update(self, **values) -> "TrainConfig":
        types = {f.name: f.type for f in fields(self)}
        for key, value in values.items():
            if key not in types:
                raise ConfigError(key, "unknown field")
            setattr(self, key, value)
        self.validate()
        return self

    def dump(self) -> str:
        """Every field with its resolved value; reduced-scale defaults are marked ``desk``."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            line = f"{f.name} = {_format(value)}"
            if f.name in DESK_OVERRIDES and value != DESK_OVERRIDES[f.name]:
                line += f"  # desk (full scale: {DESK_OVERRIDES[f.name]})"
            lines.append(line)
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(name: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(name, f"expected {kind}, got {raw!r}") from None
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` comments, blank lines ignored)."""
    kinds = {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line{lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(key, "unknown field")
        values[key] = _coerce(key, kinds[key], raw)
    cfg = base or TrainConfig()
    return cfg.update(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("path", f"cannot read {path}: {exc}") from exc
    return parse_config(text)
