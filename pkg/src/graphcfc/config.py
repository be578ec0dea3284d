"""Run configuration: a flat dataclass per concern, stored as INI sections."""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, fields
from typing import Dict, Iterable, Tuple

from .corpus import CorpusError, GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-5
    l2: float = 1e-5
    seed: int = 0
    patience: int = 15
    split: str = "sequential-80-10"
    window_past: int = 4
    window_future: int = 4
    layers: int = 2
    heads: int = 2
    dim: int = 64
    mu: float = 1.0
    dropout: float = 0.1
    modalities: str = "avt"
    skip_connection: bool = True
    edge_type_embedding: bool = True
    speaker_embedding: bool = True
    shared_loss: bool = True
    separate_loss: bool = True
    use_multigat: bool = True
    use_feedforward: bool = True
    norm_position: str = "post"
    head_mode: str = "average"
    direction_mode: str = "future_in"
    leaky_slope: float = 0.2

    @property
    def window(self) -> Tuple[int, int]:
        return (self.window_past, self.window_future)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def validate(self):
        mods = set(self.modalities)
        if not mods or not mods <= {"a", "v", "t"} or len(mods) != len(self.modalities):
            raise ConfigError(f"modalities must be a non-empty subset of 'avt', got {self.modalities!r}")
        if self.norm_position not in ("post", "pre"):
            raise ConfigError("norm_position must be 'post' or 'pre'")
        if self.head_mode not in ("average", "concat"):
            raise ConfigError("head_mode must be 'average' or 'concat'")
        if self.direction_mode not in ("future_in", "literal"):
            raise ConfigError("direction_mode must be 'future_in' or 'literal'")
        if self.split not in ("sequential-80-10", "ratio-random"):
            raise ConfigError(f"unknown split {self.split!r}")
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError("mu must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        for name in ("epochs", "batch_size", "layers", "heads", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.window_past < 0 or self.window_future < 0:
            raise ConfigError("window sizes must be >= 0")
        if self.lr < 0 or self.weight_decay < 0 or self.l2 < 0:
            raise ConfigError("lr, weight_decay and l2 must be >= 0")
        return self


SECTIONS = {"train": TrainConfig, "data": GeneratorConfig}


def _parse(field, raw: str):
    kind = field.type if isinstance(field.type, type) else {"int": int, "float": float,
                                                             "bool": bool, "str": str}[field.type]
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{field.name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{field.name}: cannot parse {raw!r} as {kind.__name__}") from None


def _field_index() -> Dict[str, Tuple[str, dataclasses.Field]]:
    index = {}
    for section, cls in SECTIONS.items():
        for f in fields(cls):
            index[f"{section}.{f.name}"] = (section, f)
    return index


def resolve(config_path=None, overrides: Iterable[str] = (), env=None):
    """Build (TrainConfig, GeneratorConfig) from defaults < GCFC_SEED < file < overrides.

    Overrides are ``key=value`` with ``key`` either ``section.name`` or a bare
    name that exists in exactly one section.
    """
    env = os.environ if env is None else env
    index = _field_index()
    values = {section: {} for section in SECTIONS}
    if env.get("GCFC_SEED"):
        values["train"]["seed"] = _parse(index["train.seed"][1], env["GCFC_SEED"])
    if config_path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(config_path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{config_path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if f"{section}.{key}" not in index:
                    raise ConfigError(f"{config_path}: unknown key {section}.{key}")
                values[section][key] = _parse(index[f"{section}.{key}"][1], raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." not in key:
            matches = [k for k in index if k.split(".", 1)[1] == key]
            if len(matches) != 1:
                raise ConfigError(f"unknown config key {key!r}" if not matches
                                  else f"ambiguous config key {key!r}: {matches}")
            key = matches[0]
        if key not in index:
            raise ConfigError(f"unknown config key {key!r}")
        section, f = index[key]
        values[section][f.name] = _parse(f, raw)
    train = TrainConfig(**values["train"]).validate()
    data = GeneratorConfig(**values["data"])
    try:
        data.validate()
    except CorpusError as exc:
        raise ConfigError(f"[data]: {exc}") from None
    return train, data


def to_ini(train: TrainConfig = None, data: GeneratorConfig = None) -> str:
    parser = configparser.ConfigParser()
    for section, obj in (("train", train), ("data", data)):
        if obj is not None:
            parser[section] = {k: str(v) for k, v in dataclasses.asdict(obj).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def reference() -> str:
    """Every key with its default, as an INI document."""
    return to_ini(TrainConfig(), GeneratorConfig())
