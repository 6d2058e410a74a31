"""Canonical text form of DSL documents (UTF-8 JSON, sorted keys)."""

from __future__ import annotations

import json
from typing import Any

from .model import DslDocument, DslParseError, canonical_dumps


def serialize(doc: DslDocument) -> str:
    return canonical_dumps(doc.to_dict())


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def parse(text: str | bytes) -> DslDocument:
    """Inverse of :func:`serialize`. Structural only; validate separately."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DslParseError("invalid UTF-8", exc.start) from exc
    try:
        data: Any = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DslParseError(exc.msg, _byte_offset(text, exc.pos)) from exc
    if not isinstance(data, dict):
        raise DslParseError("document must be a JSON object", 0)
    missing = [k for k in ("topic_id", "paradigm", "params") if k not in data]
    if missing:
        raise DslParseError(f"missing field(s) {missing}", 0)
    if not isinstance(data["params"], dict):
        raise DslParseError("params must be an object", 0)
    return DslDocument(
        topic_id=data["topic_id"],
        paradigm=data["paradigm"],
        params=data["params"],
        grammar_version=int(data.get("grammar_version", 1)),
    )
