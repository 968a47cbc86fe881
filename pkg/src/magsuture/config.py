"""Flat dotted key-value configuration files.

One ``section.key = value`` assignment per line; ``#`` starts a comment;
blank lines are ignored.  Values stay strings until a typed getter pulls
them out, so unknown keys can be reported verbatim.  The full key schema
lives in docs/config-schema.txt.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ConfigError",
    "format_config",
    "get_bool",
    "get_float",
    "get_int",
    "get_pairs",
    "get_str",
    "parse_config",
    "parse_config_file",
]


class ConfigError(ValueError):
    """Malformed configuration text or values."""


def parse_config(text):
    """Parse config text into an ordered {dotted key: raw string} mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_config(mapping):
    """Render a mapping back to config text (sorted, round-trippable)."""
    lines = [f"{key} = {mapping[key]}" for key in sorted(mapping)]
    return "\n".join(lines) + "\n"


def _fetch(cfg, key, default):
    if key not in cfg:
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return None
    return cfg[key]


_REQUIRED = object()


def get_float(cfg, key, default=_REQUIRED):
    raw = _fetch(cfg, key, default)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc


def get_int(cfg, key, default=_REQUIRED):
    raw = _fetch(cfg, key, default)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc


def get_bool(cfg, key, default=_REQUIRED):
    raw = _fetch(cfg, key, default)
    if raw is None:
        return default
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def get_str(cfg, key, default=_REQUIRED):
    raw = _fetch(cfg, key, default)
    return default if raw is None else raw


def get_pairs(cfg, key, default=_REQUIRED):
    """Parse 'x1,y1; x2,y2; ...' into an (m, 2) float array."""
    raw = _fetch(cfg, key, default)
    if raw is None:
        return default
    pairs = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigError(f"{key}: expected 'x,y' pairs, got {chunk!r}")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ConfigError(f"{key}: non-numeric pair {chunk!r}") from exc
    if not pairs:
        raise ConfigError(f"{key}: no coordinate pairs found")
    return np.array(pairs, dtype=float)
