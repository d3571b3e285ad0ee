"""Seed derivation and ``key=value`` configuration overrides."""

import dataclasses
import hashlib


def derive_seed(seed, purpose):
    """Stable 63-bit sub-seed for ``(seed, purpose)``."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _coerce(value, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def parse_overrides(lines):
    """``section.field=value`` lines into ``{section: {field: raw}}``; '#' starts a comment."""
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ValueError(f"line {n}: key {key!r} must look like section.field")
        section, name = key.split(".", 1)
        out.setdefault(section, {})[name] = value
    return out


def apply_overrides(sections, overrides):
    """Replace fields of the dataclass instances in ``sections`` (name -> instance).

    Unknown sections or fields raise ``KeyError``.
    """
    result = dict(sections)
    for section, values in overrides.items():
        if section not in sections:
            raise KeyError(f"unknown config section {section!r}; known: {sorted(sections)}")
        obj = sections[section]
        fields = {f.name for f in dataclasses.fields(obj)}
        changes = {}
        for name, raw in values.items():
            if name not in fields:
                raise KeyError(f"unknown config key {section}.{name}")
            changes[name] = _coerce(raw, getattr(obj, name))
        result[section] = dataclasses.replace(obj, **changes)
    return result
