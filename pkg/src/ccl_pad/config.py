"""Sectioned key=value run configuration.

Values are parsed against the defaults of the dataclass each section feeds,
so a config file only needs the keys it changes.  Overrides use
``section.key=value`` and win over file values.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from pathlib import Path
from typing import Any, Iterable

from .catalog import SynthConfig
from .model import PAPER_PRESET, ModelConfig
from .trainer import TrainConfig

DEFAULTS: dict[str, dict[str, str]] = {
    "catalog": {"path": "", "seed": "7"},
    "protocol": {"id": "P1", "split_seed": "0", "threshold_rule": "eer"},
    "train": {},
    "model": {"preset": "desk"},
    "rppg": {
        "is_live": "true",
        "pulse_rate": "1.2",
        "mode": "constant",
        "frequency": "2.0",
        "amplitude": "0.01",
        "base_lux": "1000",
        "duration": "10",
        "frame_rate": "30",
        "noise": "0.002",
        "seed": "0",
    },
}


class ConfigError(ValueError):
    pass


def load(path: str | Path | None = None, overrides: Iterable[str] = ()) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp.read(path)
    for item in overrides:
        set_value(cp, item)
    return cp


def set_value(cp: configparser.ConfigParser, item: str) -> None:
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value: {item!r}")
    key, value = item.split("=", 1)
    section, name = key.split(".", 1)
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, name, value)


def dumps(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    for section in sorted(cp.sections()):
        buf.write(f"[{section}]\n")
        for key in sorted(cp[section]):
            buf.write(f"{key} = {cp[section][key]}\n")
        buf.write("\n")
    return buf.getvalue()


def _convert(raw: str, default: Any, name: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x for x in raw.replace(" ", "").split(",") if x]
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in items)
        if default is None:
            if raw.lower() in ("", "none"):
                return None
            if "," in raw:
                return tuple(float(x) for x in raw.split(","))
            return int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def build_dataclass(cls, section: configparser.SectionProxy | dict, skip: Iterable[str] = (), base=None):
    base = base if base is not None else cls()
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key, raw in dict(section).items():
        if key in skip:
            continue
        if key not in names:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        kwargs[key] = _convert(raw, getattr(base, key), key)
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def synth_config(cp) -> SynthConfig:
    return build_dataclass(SynthConfig, cp["catalog"], skip=("path", "seed"))


def model_config(cp, input_dim: int) -> ModelConfig:
    section = cp["model"]
    preset = section.get("preset", "desk")
    if preset not in ("desk", "paper"):
        raise ConfigError(f"unknown model preset {preset!r}")
    base = PAPER_PRESET if preset == "paper" else ModelConfig()
    base = dataclasses.replace(base, input_dim=input_dim)
    return build_dataclass(ModelConfig, section, skip=("preset",), base=base)


def train_config(cp, input_dim: int) -> TrainConfig:
    cfg = build_dataclass(TrainConfig, cp["train"], skip=("model",))
    return dataclasses.replace(cfg, model=model_config(cp, input_dim))
