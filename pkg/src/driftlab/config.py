"""Flat key-value experiment configs with a canonical text format.

The on-disk format is a diffable INI-like text: top-level ``key = value``
lines followed by ``[section]`` blocks.  JSON files with the same nested
shape are accepted as alternative input.  ``format_text(parse(...))`` is
canonical: formatting a parsed canonical document reproduces it byte for
byte.
"""

from __future__ import annotations

import json
from typing import Optional

from .errors import ConfigError


class Config:
    """A parsed config: top-level scalars plus named sections of scalars.

    All values are stored as strings; typed accessors perform conversion
    and raise ConfigError with the offending key on failure.
    """

    def __init__(self, top: Optional[dict] = None, sections: Optional[dict] = None):
        self.top = {k: str(v) for k, v in (top or {}).items()}
        self.sections = {name: {k: str(v) for k, v in sec.items()}
                         for name, sec in (sections or {}).items()}

    # -- typed access --------------------------------------------------

    def _lookup(self, key: str, section: Optional[str]):
        table = self.top if section is None else self.sections.get(section, {})
        return table.get(key)

    def get_str(self, key: str, section: Optional[str] = None,
                default=None, required: bool = False) -> Optional[str]:
        v = self._lookup(key, section)
        if v is None:
            if required:
                where = f"[{section}] " if section else ""
                raise ConfigError(f"missing required key {where}{key}")
            return default
        return v

    def get_int(self, key, section=None, default=None, required=False):
        v = self.get_str(key, section, None, required)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"key {key} expects an integer, got {v!r}") from exc

    def get_float(self, key, section=None, default=None, required=False):
        v = self.get_str(key, section, None, required)
        if v is None:
            return default
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"key {key} expects a number, got {v!r}") from exc

    def get_float_list(self, key, section=None, default=None, required=False):
        v = self.get_str(key, section, None, required)
        if v is None:
            return default
        try:
            return [float(tok) for tok in v.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"key {key} expects comma-separated numbers, got {v!r}") from exc

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    # -- validation -----------------------------------------------------

    def validate(self, allowed_top: set, allowed_sections: dict) -> None:
        """Reject any key or section outside the declared schema."""
        for key in self.top:
            if key not in allowed_top:
                raise ConfigError(f"unknown key {key!r}")
        for name, sec in self.sections.items():
            if name not in allowed_sections:
                raise ConfigError(f"unknown section [{name}]")
            for key in sec:
                if key not in allowed_sections[name]:
                    raise ConfigError(f"unknown key {key!r} in section [{name}]")


def parse_text(text: str) -> Config:
    """Parse the key-value text format.

    Lines are ``key = value``; ``[name]`` opens a section; ``#`` starts a
    comment line; blank lines are ignored.  Duplicate keys are rejected.
    """
    top: dict = {}
    sections: dict = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if not current:
                raise ConfigError(f"line {lineno}: empty section name")
            if current in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        table = top if current is None else sections[current]
        if key in table:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        table[key] = value
    return Config(top, sections)


def parse_json_text(text: str) -> Config:
    """Parse the JSON alternative: an object whose object-valued entries
    become sections and scalar entries become top-level keys."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON config: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("JSON config must be an object")
    top, sections = {}, {}
    for key, value in obj.items():
        if isinstance(value, dict):
            sections[key] = {k: _scalar(v, f"{key}.{k}") for k, v in value.items()}
        else:
            top[key] = _scalar(value, key)
    return Config(top, sections)


def _scalar(v, where: str) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float, str)):
        return str(v)
    if isinstance(v, list):
        return ",".join(_scalar(x, where) for x in v)
    raise ConfigError(f"unsupported value type for {where}: {type(v).__name__}")


def load(path: str) -> Config:
    """Load a config file; '.json' selects the JSON parser."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.endswith(".json"):
        return parse_json_text(text)
    return parse_text(text)


def format_text(cfg: Config) -> str:
    """Canonical text rendering: sorted keys, sorted sections, one blank
    line between blocks, trailing newline."""
    blocks = []
    if cfg.top:
        blocks.append("\n".join(f"{k} = {cfg.top[k]}" for k in sorted(cfg.top)))
    for name in sorted(cfg.sections):
        sec = cfg.sections[name]
        lines = [f"[{name}]"] + [f"{k} = {sec[k]}" for k in sorted(sec)]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n" if blocks else ""
