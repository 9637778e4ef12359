"""
Dataclass configs built from plain dicts or JSON.

Unknown keys are rejected rather than ignored so a typo in a config file
cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from typing import Any, TypeVar

from . import storage
from .errors import ContractError

T = TypeVar("T")


def _unwrap_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def from_dict(cls: type[T], data: dict | str | None) -> T:
    """
    Build dataclass `cls` from a dict or a JSON string. Nested dataclass
    fields are built recursively; lists become tuples where the field is a tuple.
    """
    if data is None:
        return cls()
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ContractError(f"{cls.__name__} config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ContractError(f"{cls.__name__} config must be an object, got {type(data).__name__}")

    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ContractError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")

    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        tp = _unwrap_optional(hints[name])
        if isinstance(value, dict) and dataclasses.is_dataclass(tp):
            # partial nested objects override the field's default
            default = fields[name].default_factory
            if default is not dataclasses.MISSING:
                value = {**to_dict(default()), **value}
            value = from_dict(tp, value)
        elif isinstance(value, list) and typing.get_origin(tp) is tuple:
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ContractError(f"invalid {cls.__name__} config: {exc}") from exc


def to_dict(obj) -> dict:
    """JSON-ready dict of a dataclass config; tuples become lists."""
    return json.loads(json.dumps(dataclasses.asdict(obj)))


def load_config_file(path: str) -> dict:
    try:
        data = json.loads(storage.read_text(path))
    except json.JSONDecodeError as exc:
        raise ContractError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ContractError(f"config file {path} must hold a JSON object")
    return data
