"""JSON run configuration: sections backbone, decoder, loss, train, data.

Every field is optional; missing fields take the dataclass defaults and
unknown keys are rejected. Errors carry the dotted path of the offending
field.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .backbone import BackboneConfig
from .decoder import DecoderConfig
from .errors import ConfigError
from .losses import LossConfig
from .train import TrainConfig


@dataclass
class DataConfig:
    hflip: bool = False
    val_count: int = 0  # scenes held out from the training directory for validation

    def validate(self, path: str = "data"):
        if self.val_count < 0:
            raise ConfigError(f"{path}.val_count: must be >= 0")
        return self


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        for f in fields(self):
            getattr(self, f.name).validate(f.name)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _type_name(t) -> str:
    return {bool: "a boolean", int: "an integer", float: "a number", str: "a string", list: "a list"}[t]


def _coerce(value, default, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: must be {_type_name(bool)}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: must be {_type_name(int)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: must be {_type_name(float)}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: must be {_type_name(str)}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: must be {_type_name(list)}")
        proto = default[0] if default else value[0] if value else 0
        out = [_coerce(v, proto, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(out) if isinstance(default, tuple) else out
    raise ConfigError(f"{path}: unsupported field type")


def _section(cls, raw, path: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: must be an object")
    proto = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
        kwargs[key] = _coerce(value, getattr(proto, key), f"{path}.{key}")
    return cls(**kwargs)


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    sections = {f.name: f for f in fields(RunConfig)}
    for key in raw:
        if key not in sections:
            raise ConfigError(f"{key}: unknown section")
    cfg = RunConfig(
        backbone=_section(BackboneConfig, raw.get("backbone"), "backbone"),
        decoder=_section(DecoderConfig, raw.get("decoder"), "decoder"),
        loss=_section(LossConfig, raw.get("loss"), "loss"),
        train=_section(TrainConfig, raw.get("train"), "train"),
        data=_section(DataConfig, raw.get("data"), "data"),
    )
    return cfg.validate()


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON ({e})") from None
    return parse_config(raw)


def config_from_json(text: str) -> RunConfig:
    return parse_config(json.loads(text))
