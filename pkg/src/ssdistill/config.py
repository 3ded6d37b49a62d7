"""Desk defaults and plain ``section.key=value`` configuration files."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .distill import DistillConfig
from .errors import ConfigurationError
from .evaluation import LinearEvalConfig, PretrainConfig
from .pipeline import MethodConfig
from .teacher import TeacherConfig

SECTIONS = {
    "teacher": TeacherConfig,
    "method": MethodConfig,
    "distill": DistillConfig,
    "pretrain": PretrainConfig,
    "linear": LinearEvalConfig,
}


def desk_defaults() -> dict:
    """Fresh default configs, one per section."""
    return {name: cls() for name, cls in SECTIONS.items()}


def parse_config_text(text: str) -> dict[str, str]:
    """``section.key=value`` lines; ``#`` starts a comment; blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(value: str, current, key: str):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
    if value.lower() == "none" and (current is None or isinstance(current, float)):
        return None
    try:
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float) or current is None:
            return float(value)
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {value!r}") from exc
    return value


def apply_overrides(configs: dict, pairs: dict[str, str]) -> dict:
    """Return copies of ``configs`` with ``section.key`` values replaced."""
    out = dict(configs)
    for key, value in pairs.items():
        section, _, name = key.partition(".")
        if section not in out or not name:
            raise ConfigurationError(f"unknown config key {key!r}")
        cfg = out[section]
        fields = {f.name for f in dataclasses.fields(cfg)}
        if name not in fields:
            raise ConfigurationError(f"unknown config key {key!r}; {section} has {sorted(fields)}")
        try:
            out[section] = dataclasses.replace(cfg, **{name: _coerce(value, getattr(cfg, name), key)})
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{key}={value}: {exc}") from exc
    return out


def load_config(path) -> dict:
    return apply_overrides(desk_defaults(), parse_config_text(Path(path).read_text()))


def canonical(configs: dict) -> str:
    return json.dumps({k: dataclasses.asdict(v) for k, v in sorted(configs.items())},
                      sort_keys=True)
