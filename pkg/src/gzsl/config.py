"""Plain-text ``key=value`` configuration files.

Blank lines and ``#`` comments are ignored. Values are coerced to the type
of the matching dataclass field; tuples are comma separated.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key] = value
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), str(path))


def _coerce(value: Any, tp) -> Any:
    if not isinstance(value, str):
        return value
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("", "none"):
            return None
        return _coerce(value, args[0])
    if origin is tuple:
        (inner, *_) = typing.get_args(tp) or (str,)
        return tuple(_coerce(v.strip(), inner) for v in value.split(",") if v.strip())
    if tp is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if tp in (int, float, str):
        try:
            return tp(value)
        except ValueError:
            raise ConfigError(f"cannot read {value!r} as {tp.__name__}") from None
    return value


def build(cls, values: Mapping[str, Any], **overrides):
    """Instantiate dataclass ``cls`` from string settings; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    merged = {**values, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = sorted(set(merged) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)} (known: {', '.join(sorted(names))})")
    kwargs = {k: _coerce(v, hints[k]) for k, v in merged.items()}
    return cls(**kwargs)


def dump(obj) -> str:
    """Serialise a dataclass back to ``key=value`` lines."""
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif v is None:
            v = "none"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"
