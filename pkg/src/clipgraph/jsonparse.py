"""Pull JSON out of free-form model output."""
from __future__ import annotations

import json
import re
from typing import Any

_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)
_CLOSERS = {"{": "}", "[": "]"}


class NoJSONError(ValueError):
    def __init__(self, raw: str) -> None:
        excerpt = raw if len(raw) <= 200 else raw[:200] + "..."
        super().__init__(f"no parseable JSON in model output: {excerpt!r}")
        self.raw = raw


def _close_truncated(fragment: str) -> str | None:
    """Append the closers a truncated object/array is missing, if that is all it lacks."""
    stack: list[str] = []
    in_str = False
    escaped = False
    for ch in fragment:
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch in _CLOSERS:
            stack.append(_CLOSERS[ch])
        elif ch in "}]":
            if not stack or stack.pop() != ch:
                return None
    if in_str or not stack:
        return None
    return fragment.rstrip().rstrip(",") + "".join(reversed(stack))


def _scan(text: str, want: type | None) -> Any:
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch not in "{[":
            continue
        try:
            value, _ = decoder.raw_decode(text, i)
            if want is None or isinstance(value, want):
                return value
            continue
        except json.JSONDecodeError:
            repaired = _close_truncated(text[i:])
            if repaired is None:
                continue
            try:
                value = json.loads(repaired)
            except json.JSONDecodeError:
                continue
            if want is None or isinstance(value, want):
                return value
    raise LookupError


def extract_json(raw: str, want: type | None = None) -> Any:
    """Return the first JSON object or array in ``raw`` (of type ``want`` if given).

    Code fences are honoured first. Output whose only defect is missing
    trailing brackets is closed up; anything else raises :class:`NoJSONError`.
    """
    candidates = [m.group(1) for m in _FENCE_RE.finditer(raw)] + [raw]
    for text in candidates:
        try:
            return _scan(text, want)
        except LookupError:
            continue
    raise NoJSONError(raw)
