"""Model/training configuration and its flat ``key=value`` text form."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    T: int = 2
    clip_len: int = 15
    height: int = 64
    width: int = 96
    c_feat: int = 32
    c_a: int = 32
    c_h: int = 32
    enc_widths: tuple[int, ...] = (8, 16, 32, 32, 32)
    offset_hidden: int = 32
    dec_width: int = 32
    learning_rate: float = 1e-4
    batch_size: int = 1
    max_steps: int = 2000
    checkpoint_every: int = 0
    grad_clip: float = 0.0
    seed: int = 0
    dtype: str = "float32"
    lstm_bias: bool = False
    ref_fusion: bool = False
    no_bi: bool = False
    no_forward: bool = False
    no_backward: bool = False
    dconv_as_conv: bool = False
    drop_p3: bool = False
    drop_p4: bool = False
    drop_p5: bool = False

    def __post_init__(self):
        self.enc_widths = tuple(int(v) for v in self.enc_widths)
        self.validate()

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def window(self) -> int:
        return 2 * self.T + 1

    @property
    def levels(self) -> tuple[str, ...]:
        """Pyramid levels kept by the alignment network, coarsest first."""
        return tuple(lv for lv in ("p5", "p4", "p3") if not getattr(self, f"drop_{lv}"))

    def validate(self) -> None:
        if self.T < 0:
            raise ConfigError("T must be non-negative")
        if self.window > self.clip_len:
            raise ConfigError(f"window 2T+1={self.window} exceeds clip_len={self.clip_len}")
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ConfigError(f"input {self.height}x{self.width} must be positive multiples of 32")
        if len(self.enc_widths) != 5:
            raise ConfigError("enc_widths needs one width per encoder stage (5)")
        if not self.levels:
            raise ConfigError("at least one pyramid level must be kept")
        if self.no_forward and (self.no_backward or self.no_bi):
            raise ConfigError("no_forward together with no_backward or no_bi leaves no recurrent unit")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        for name in ("c_feat", "c_a", "c_h", "offset_hidden", "dec_width", "batch_size", "clip_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = parse_key_values(text)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(known[key], raw)
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


def parse_key_values(text: str) -> dict[str, str]:
    """Parse flat ``key=value`` lines (``#`` comments allowed)."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[top]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed key=value text: {exc}") from exc
    return dict(parser["top"])


def _coerce(f: dataclasses.Field, raw: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    try:
        if kind.startswith("tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {f.name}: {raw!r}") from exc
    return raw
