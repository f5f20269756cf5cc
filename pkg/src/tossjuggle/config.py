"""Flat ``key = value`` configuration files.

One assignment per line, ``#`` starts a comment.  Values are parsed as a
number, a whitespace- or comma-separated list of numbers, ``true``/``false``,
or otherwise kept as a string.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, message, line=None, source="<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _value(text):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    parts = text.replace(",", " ").split()
    try:
        nums = [float(p) if any(c in p for c in ".eE") or p.lower() in ("inf", "-inf", "nan")
                else int(p) for p in parts]
    except ValueError:
        return text
    if len(nums) == 1:
        return nums[0]
    return tuple(nums)


def parse_text(text, source="<config>"):
    out = {}
    lines = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, source)
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not val:
            raise ConfigError(f"empty key or value in {raw.strip()!r}", n, source)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", n, source)
        out[key] = _value(val)
        lines[key] = n
    return out, lines


def load(path):
    path = Path(path)
    return parse_text(path.read_text(), str(path))


def dump(mapping):
    rows = []
    for k, v in mapping.items():
        if isinstance(v, (tuple, list)):
            v = " ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        rows.append(f"{k} = {v}")
    return "\n".join(rows) + "\n"


def build_dataclass(cls, mapping, lines=None, source="<config>", allow_extra=False):
    """Instantiate ``cls`` from the entries of ``mapping`` that name its fields."""
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(mapping) - names
    if extra and not allow_extra:
        key = sorted(extra)[0]
        raise ConfigError(f"unknown key {key!r}", (lines or {}).get(key), source)
    kwargs = {k: v for k, v in mapping.items() if k in names}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), None, source) from exc
