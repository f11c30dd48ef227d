"""JSON <-> dataclass conversion for run and grid configs.

Keys mirror the dataclass field names; unknown keys are rejected so a typo
in a sweep file fails loudly instead of silently using a default.
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

from .errors import ValidationError


def from_dict(cls, data: dict, where: str = ""):
    if not isinstance(data, dict):
        raise ValidationError(f"{where or cls.__name__}: expected an object", [where or cls.__name__])
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"unknown keys in {where or cls.__name__}",
                              [f"{where}.{k}" if where else k for k in unknown])
    kwargs = {}
    for key, value in data.items():
        current = getattr(defaults, key)
        path = f"{where}.{key}" if where else key
        if dataclasses.is_dataclass(current):
            kwargs[key] = from_dict(type(current), value, path)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "noiseless" if value > 0 else "-inf"
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def to_dict(obj) -> dict:
    return _jsonable(dataclasses.asdict(obj))


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})", ["config"]) from exc


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(to_dict(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
