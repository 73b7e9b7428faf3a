"""key=value text configs and dataclass (de)serialization.

Format: one ``key=value`` per line, ``#`` starts a comment, blank lines are
ignored. Keys may be dotted (``recon.token_dim``) to address nested configs.
Values are parsed according to the target field's type.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


def parse_kv_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text())


def write_kv(path, items: dict, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{k}={format_value(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def _convert(raw: str, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        return _convert(raw, args[0])
    if tp is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if origin in (tuple, list):
        (inner,) = typing.get_args(tp)[:1] or (str,)
        items = [s for s in raw.split(",") if s.strip()]
        vals = [_convert(s.strip(), inner) for s in items]
        return tuple(vals) if origin is tuple else vals
    return raw


def to_flat(obj, prefix: str = "") -> dict:
    """Dataclass -> flat {dotted_key: value}."""
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out.update(to_flat(v, key + "."))
        else:
            out[key] = v
    return out


def apply_flat(obj, items: dict, prefix: str = "", strict: bool = True):
    """Set dataclass fields from {dotted_key: str}; returns the keys consumed."""
    hints = typing.get_type_hints(type(obj))
    used = set()
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        cur = getattr(obj, f.name)
        if dataclasses.is_dataclass(cur):
            used |= apply_flat(cur, items, key + ".", strict=False)
        elif key in items:
            setattr(obj, f.name, _convert(items[key], hints[f.name]))
            used.add(key)
    if strict:
        unknown = set(items) - used
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
    return used
