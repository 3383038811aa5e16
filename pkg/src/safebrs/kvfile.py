"""Flat ``key = value`` text files used for specs, configs and models.

Blank lines and ``#`` comments (whole-line or trailing) are ignored. Keys are unique.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping


class KVFormatError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise KVFormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise KVFormatError(f"line {lineno}: empty key")
        if key in out:
            raise KVFormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def format_kv(items: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def write_kv(path: str | Path, items: Mapping[str, object]) -> None:
    Path(path).write_text(format_kv(items))
