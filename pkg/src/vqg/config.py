"""Run configuration: every tunable in one flat record.

Files are plain text, one ``key = value`` per line; ``#`` starts a comment. Values are
coerced to the type of the field's default. Command-line overrides are applied on top.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import QuestionType
from .model import DecodeConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    alpha: float = 0.75
    beta: float = 0.25
    discount: float = 0.75
    k_fixed: int = 1
    beam_width: int = 3
    max_len: int = 12
    hidden_size: int = 300
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 64
    min_count: int = 1
    val_fraction: float = 0.1
    caption_draw: str = "uniform"
    type_mode: str = "sample"
    beta_sweep: tuple[float, ...] = ()
    embeddings_path: str = ""
    workers: int = 1

    def __post_init__(self):
        if self.caption_draw not in ("uniform", "prior"):
            raise ConfigError(f"caption_draw must be 'uniform' or 'prior', got {self.caption_draw!r}")
        if self.type_mode not in ("sample", "top"):
            raise ConfigError(f"type_mode must be 'sample' or 'top', got {self.type_mode!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError(f"discount must be in (0, 1), got {self.discount}")
        for name in ("beam_width", "max_len", "hidden_size", "batch_size", "min_count", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.k_fixed < 0:
            raise ConfigError("k_fixed must be >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["beta_sweep"] = list(self.beta_sweep)
        return d

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr=self.lr, seed=self.seed,
                           alpha=self.alpha, hidden_size=self.hidden_size, discount=self.discount,
                           k_fixed=self.k_fixed, min_count=self.min_count, val_fraction=self.val_fraction,
                           caption_draw=self.caption_draw, beta_sweep=self.beta_sweep,
                           embeddings_path=self.embeddings_path or None)

    def decode_config(self, beta: float | None = None) -> DecodeConfig:
        return DecodeConfig(QuestionType.WHAT, self.beta if beta is None else beta, self.k_fixed,
                            self.beam_width, self.max_len, self.seed)


FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, raw) -> object:
    kind = FIELD_TYPES[key]
    if not isinstance(raw, str):
        if kind is tuple:
            return tuple(float(v) for v in raw)
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
            return raw
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}")
    text = raw.strip()
    try:
        if kind is tuple:
            return tuple(float(v) for v in text.replace(",", " ").split())
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None
    return text


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve(base: Mapping | None = None, path: str | Path | None = None,
            overrides: Mapping | None = None) -> RunConfig:
    """Defaults, then ``base`` (e.g. a checkpoint's stored config), then the file, then overrides."""
    values: dict = {}
    for key, raw in (base or {}).items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, raw)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        values.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
    for key, raw in (overrides or {}).items():
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def dump(config: RunConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ", ".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
