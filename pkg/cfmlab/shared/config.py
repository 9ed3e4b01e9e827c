"""TOML config files and ``key=value`` overrides as plain nested dicts.

Typed experiment settings are assembled on top of these helpers in
``cfmlab.experiment``.
"""
from __future__ import annotations

import copy
import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, DataError


def load_toml(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_value(text: str) -> Any:
    """A TOML literal (number, bool, array, quoted string) or else the bare text."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: Mapping[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    out = copy.deepcopy(dict(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        set_dotted(out, key, parse_value(value.strip()))
    return out


def set_dotted(raw: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{part} is not a table", key)
        node = child
    node[parts[-1]] = value


def read_table(raw: Mapping[str, Any], name: str, allowed: set) -> Dict[str, Any]:
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table", name)
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in [{name}]", f"{name}.{unknown[0]}")
    return dict(table)


def typed_value(table: Mapping[str, Any], key: str, kind, prefix: str, default=None):
    if key not in table or table[key] is None:
        return default
    value = table[key]
    try:
        if kind is int and (isinstance(value, bool) or float(value) != int(value)):
            raise ValueError
        if kind is bool and not isinstance(value, bool):
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected {kind.__name__}, got {value!r}", f"{prefix}.{key}") from None


def strip_none(value):
    if isinstance(value, dict):
        return {k: strip_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, list):
        return [strip_none(v) for v in value]
    return value
