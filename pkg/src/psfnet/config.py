"""Flat ``section.key = value`` config files shared by the trainer and CLI.

Example::

    # comments and blank lines are ignored
    model.channels = 64
    model.fusion_mode = sffb
    train.epochs = 210
    tonemap.mu = 5000
    data.resize = 1000x1500
    infer.tile_size = 512

Sections map onto :class:`ModelConfig`, :class:`TrainConfig`,
:class:`DataConfig`, :class:`TonemapParams` and :class:`TileSpec`.
"""
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError, ParseError
from .model import ModelConfig
from .tiling import TileSpec
from .tonemap import TonemapParams
from .trainer import DataConfig, TrainConfig

SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "tonemap": TonemapParams,
    "infer": TileSpec,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    tonemap: TonemapParams = field(default_factory=TonemapParams)
    infer: TileSpec = field(default_factory=TileSpec)


def parse_pairs(text, source="<config>"):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ParseError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _coerce(value, tp, key):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("none", "null", ""):
            return None
        return _coerce(value, args[0], key)
    try:
        if tp is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
    except ValueError:
        raise ParseError(f"{key}: cannot read {value!r} as {tp.__name__}") from None
    return value


def _build(cls, section, values):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key {section}.{key}")
        kwargs[key] = _coerce(value, hints[key], f"{section}.{key}")
    return cls(**kwargs)


def config_from_pairs(pairs):
    grouped = {name: {} for name in SECTIONS}
    for key, value in pairs.items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigurationError(f"unknown config key {key}")
        grouped[section][name] = value
    return RunConfig(**{s: _build(SECTIONS[s], s, v) for s, v in grouped.items()})


def load_config(path=None):
    """Read a config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return config_from_pairs(parse_pairs(path.read_text(), str(path)))


def dump_config(run):
    lines = []
    for section in SECTIONS:
        obj = getattr(run, section)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            lines.append(f"{section}.{f.name} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
