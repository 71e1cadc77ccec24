"""Flat key-value run configs with line-number diagnostics.

Format: one `key = value` per line, `#` comments, blank lines ignored.
`[section]` headers prefix the keys that follow as `section.key`.  Values
are plain strings until a schema converts them; unknown keys are rejected
with the offending line number so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["ConfigValue", "Field", "Schema", "parse_config"]


@dataclass(frozen=True)
class ConfigValue:
    raw: str
    line: int


def parse_config(path) -> dict:
    """Read a config file into {key: ConfigValue}; duplicates are errors."""
    out: dict[str, ConfigValue] = {}
    section = ""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for i, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError(f"{path}:{i}: empty section name")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{i}: empty key")
        full = f"{section}.{key}" if section else key
        if full in out:
            raise ConfigError(f"{path}:{i}: duplicate key {full!r}")
        out[full] = ConfigValue(value, i)
    return out


def _as_str(raw: str):
    return raw


def _as_int(raw: str):
    return int(raw)


def _as_float(raw: str):
    return float(raw)


def _as_bool(raw: str):
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _as_floats(raw: str):
    parts = [p for p in raw.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return np.array([float(p) for p in parts])


def _as_seed(raw: str):
    v = int(raw)
    if not 0 <= v < 2**64:
        raise ValueError(f"seed must be a u64, got {v}")
    return v


_CONVERTERS = {
    "str": _as_str,
    "int": _as_int,
    "float": _as_float,
    "bool": _as_bool,
    "floats": _as_floats,
    "seed": _as_seed,
}


@dataclass(frozen=True)
class Field:
    """One schema entry: value type, default (None means absent-ok)."""

    kind: str
    default: object = None
    required: bool = False

    def convert(self, key, cv: ConfigValue):
        try:
            return _CONVERTERS[self.kind](cv.raw)
        except ValueError as exc:
            raise ConfigError(f"line {cv.line}: bad value for {key!r}: {exc}") from exc


class Schema:
    """Validates parsed configs: typing, defaults, unknown-key rejection."""

    def __init__(self, fields: dict):
        self.fields = fields

    def apply(self, parsed: dict) -> dict:
        unknown = sorted(set(parsed) - set(self.fields))
        if unknown:
            k = unknown[0]
            raise ConfigError(
                f"line {parsed[k].line}: unknown config key {k!r} "
                f"(known: {', '.join(sorted(self.fields))})"
            )
        out = {}
        for key, spec in self.fields.items():
            if key in parsed:
                out[key] = spec.convert(key, parsed[key])
            elif spec.required:
                raise ConfigError(f"missing required config key {key!r}")
            else:
                out[key] = spec.default
        return out
