"""Flat `key = value` config files for the gen and train commands.

One assignment per line; blank lines and lines starting with `#` are ignored.
Values are coerced to the dataclass field's type (bools accept true/false,
1/0, yes/no). Unknown keys are hard errors so typos cannot silently pass.
"""
from __future__ import annotations

import dataclasses
import os

from .errors import SchemaError


def parse_kv_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise SchemaError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise SchemaError(f"{path}: line {line_no}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key in values:
                raise SchemaError(f"{path}: line {line_no}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def _coerce(value: str, target_type, key: str, path: str):
    try:
        if target_type is bool:
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        if target_type is str:
            return value
    except ValueError:
        raise SchemaError(f"{path}: key {key!r}: cannot parse {value!r} "
                          f"as {target_type.__name__}") from None
    raise SchemaError(f"{path}: key {key!r} has unsupported type")


def load_config(cls, path: str | None, **overrides):
    """Build a config dataclass from an optional file plus keyword overrides."""
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    if path is not None:
        raw = parse_kv_file(path)
        unknown = sorted(set(raw) - set(fields))
        if unknown:
            raise SchemaError(
                f"{path}: unknown config keys {unknown}; known keys: {sorted(fields)}")
        py_types = {"float": float, "int": int, "bool": bool, "str": str}
        for key, value in raw.items():
            t = fields[key]
            t = py_types.get(t, t) if isinstance(t, str) else t
            kwargs[key] = _coerce(value, t, key, path)
    kwargs.update(overrides)
    return cls(**kwargs)
