"""JSONL/JSON ingestion with errors that point at the file and line."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterator, TypeVar

T = TypeVar("T")


class SchemaError(ValueError):
    """Input file does not match the expected record schema."""


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(doc, dict):
                raise SchemaError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, doc


def read_jsonl(path, build: Callable[[dict], T]) -> list[T]:
    """Parse every line with ``build``; any failure becomes a SchemaError at that line."""
    out = []
    for lineno, doc in iter_jsonl(path):
        try:
            out.append(build(doc))
        except (KeyError, TypeError, ValueError) as exc:
            what = f"missing field {exc.args[0]!r}" if isinstance(exc, KeyError) else str(exc)
            raise SchemaError(f"{path}:{lineno}: {what}") from exc
    return out


def write_jsonl(path, docs) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, ensure_ascii=False, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
