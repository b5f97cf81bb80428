"""Deterministic offline backends.

``MockEmbedBackend`` hashes content words into a fixed number of buckets,
so string overlap stands in for semantic similarity. ``MockChatBackend``
plays every model role the pipeline needs; it "watches" a clip by reading
that clip's fixture sidecar, and answers verification questions by word
containment against it.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from ..core.types import ExtractionRecord
from ..text import content_tokens, keyword_phrases, tokens
from .base import BackendError, BackendTrace, ChatRequest, EmbedRequest, MediaRef

logger = logging.getLogger(__name__)

MOCK_EMBED_DIM = 256


@lru_cache(maxsize=65536)
def token_bucket(token: str, dim: int = MOCK_EMBED_DIM) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def mock_vector(text: str, dim: int = MOCK_EMBED_DIM) -> np.ndarray:
    """L2-normalised bucket counts of the content words of ``text``."""
    toks = content_tokens(text) or tokens(text) or [text.strip().lower()]
    vec = np.zeros(dim, dtype=np.float64)
    for tok in toks:
        vec[token_bucket(tok, dim)] += 1.0
    return vec / np.linalg.norm(vec)


class MockEmbedBackend:
    def __init__(self, dim: int = MOCK_EMBED_DIM, trace: BackendTrace | None = None) -> None:
        self.dim = dim
        self.trace = trace or BackendTrace()

    def embed(self, req: EmbedRequest) -> list[np.ndarray]:
        start = time.perf_counter()
        out = [mock_vector(t, self.dim) for t in req.texts]
        self.trace.record(
            "embed", req.task, time.perf_counter() - start, sum(len(t) for t in req.texts), len(out) * self.dim * 8
        )
        return out


class MissingSidecarError(BackendError):
    def __init__(self, video_id: str, clip_index: int) -> None:
        super().__init__(f"no extraction sidecar for video {video_id!r} clip {clip_index}")
        self.video_id = video_id
        self.clip_index = clip_index


_CLIP_FILE_RE = re.compile(r"(\d+)\.json$")


class SidecarStore:
    """Per-clip extraction fixtures keyed by (video_id, clip_index)."""

    def __init__(self) -> None:
        self._raw: dict[str, dict[int, str]] = {}
        self._parsed: dict[tuple[str, int], ExtractionRecord] = {}
        self._lock = threading.Lock()

    def add(self, video_id: str, clip_index: int, payload: str | Mapping) -> None:
        raw = payload if isinstance(payload, str) else json.dumps(payload, indent=2)
        self._raw.setdefault(video_id, {})[int(clip_index)] = raw

    def add_map(self, video_id: str, mapping: Mapping) -> None:
        for key, record in mapping.items():
            self.add(video_id, int(key), record)

    def load_video_dir(self, video_dir: str | Path, video_id: str | None = None) -> str:
        video_dir = Path(video_dir)
        if video_id is None:
            meta = video_dir / "meta.json"
            video_id = json.loads(meta.read_text())["video_id"] if meta.exists() else video_dir.name
        map_file = video_dir / "sidecars.json"
        if map_file.exists():
            self.add_map(video_id, json.loads(map_file.read_text()))
        side_dir = video_dir / "sidecars"
        if side_dir.is_dir():
            for path in sorted(side_dir.glob("*.json")):
                m = _CLIP_FILE_RE.search(path.name)
                if m:
                    self.add(video_id, int(m.group(1)), path.read_text())
        return video_id

    @classmethod
    def from_dirs(cls, video_dirs: Iterable[str | Path]) -> SidecarStore:
        store = cls()
        for d in video_dirs:
            store.load_video_dir(d)
        return store

    def videos(self) -> list[str]:
        return sorted(self._raw)

    def clip_indices(self, video_id: str) -> list[int]:
        return sorted(self._raw.get(video_id, {}))

    def raw(self, video_id: str, clip_index: int) -> str:
        try:
            return self._raw[video_id][clip_index]
        except KeyError:
            raise MissingSidecarError(video_id, clip_index) from None

    def record(self, video_id: str, clip_index: int) -> ExtractionRecord:
        key = (video_id, clip_index)
        with self._lock:
            if key in self._parsed:
                return self._parsed[key]
        from ..builder import parse_extraction

        rec = parse_extraction(self.raw(video_id, clip_index))
        with self._lock:
            self._parsed[key] = rec
        return rec


def clip_verifies(query: str, record: ExtractionRecord) -> bool:
    """True when every content word of ``query`` occurs in the clip's extraction text."""
    wanted = set(content_tokens(query))
    return bool(wanted) and wanted <= set(tokens(record.flat_text()))


def count_matching_actions(query: str, record: ExtractionRecord) -> int:
    """Action entries whose text (plus their entity's descriptions) covers the query's content words."""
    wanted = set(content_tokens(query))
    if not wanted:
        return 0
    n = 0
    for act in record.actions:
        related = " ".join(e.description for e in record.entities if e.name == act.entity_name)
        if wanted <= set(tokens(f"{act.entity_name} {act.description} {related}")):
            n += 1
    return n


_COUNT_RE = re.compile(r"\b(how many|number of|count)\b", re.IGNORECASE)
_AUX_RE = re.compile(r"^(did|does|do|is|are|was|were|has|have|had|can|could|will)\b", re.IGNORECASE)
_GLOBAL_RE = re.compile(r"\b(main topic|main content|mainly about|overall|whole video|entire video)\b", re.IGNORECASE)
_SPLIT_EVENTS_RE = re.compile(r",?\s*\bthen\b\s*|;|,\s*", re.IGNORECASE)
_OPTION_LINE_RE = re.compile(r"^([A-Z])\.\s+(.*)$")
_TOTAL_LINE_RE = re.compile(r"^- (.*): (\d+)$")
_ROW_RE = re.compile(r"^\|\s*(\d+)\s*\|\s*([^|]*)\|\s*([^|]*)\|\s*([^|]*)\|$")
_YESNO = {"yes", "no"}


def _field(prompt: str, name: str) -> str:
    """Value of the last ``Name: value`` line in a prompt."""
    value = ""
    for line in prompt.splitlines():
        if line.startswith(f"{name}:"):
            value = line[len(name) + 1 :].strip()
    return value


def _parse_candidates(text: str) -> dict[str, str]:
    if not text or text == "none":
        return {}
    parts = re.split(r"\(([A-Z])\)\s*", text)
    return {parts[i]: parts[i + 1].strip() for i in range(1, len(parts) - 1, 2)}


def _parse_options(prompt: str) -> dict[str, str]:
    opts: dict[str, str] = {}
    in_block = False
    for line in prompt.splitlines():
        if line.strip() == "Options:":
            in_block = True
            continue
        if in_block:
            m = _OPTION_LINE_RE.match(line.strip())
            if not m:
                break
            opts[m.group(1)] = m.group(2)
    return opts


def _as_int(text: str) -> int | None:
    text = text.strip()
    return int(text) if text.isdigit() else None


class MockChatBackend:
    """Rule-based stand-in for the video language model.

    Every request must carry a ``task``; the backend refuses tasks it has no
    rule for instead of guessing.
    """

    def __init__(self, sidecars: SidecarStore, trace: BackendTrace | None = None) -> None:
        self.sidecars = sidecars
        self.trace = trace or BackendTrace()
        self._handlers: dict[str, Callable[[ChatRequest], str]] = {
            "extract": self._extract,
            "analyze": self._analyze,
            "subqueries": self._subqueries,
            "verify": self._verify,
            "aggregate": self._aggregate,
            "rate": self._rate,
            "answer": self._answer,
        }

    def chat(self, req: ChatRequest) -> str:
        start = time.perf_counter()
        handler = self._handlers.get(req.task)
        ok = False
        text = ""
        try:
            if handler is None:
                raise BackendError(f"mock chat backend has no rule for task {req.task!r}")
            text = handler(req)
            ok = True
            return text
        finally:
            self.trace.record("chat", req.task, time.perf_counter() - start, len(req.prompt_text), len(text), ok)

    def _records(self, refs: Iterable[MediaRef]) -> list[tuple[int, ExtractionRecord]]:
        return [(m.clip_index, self.sidecars.record(m.video_id, m.clip_index)) for m in refs]

    def _extract(self, req: ChatRequest) -> str:
        if len(req.media_refs) != 1:
            raise BackendError("extraction needs exactly one clip reference")
        ref = req.media_refs[0]
        return self.sidecars.raw(ref.video_id, ref.clip_index)

    def _analyze(self, req: ChatRequest) -> str:
        question = _field(req.prompt_text, "Question")
        options = _parse_candidates(_field(req.prompt_text, "Candidates"))
        option_phrases = {" ".join(content_tokens(o)) for o in options.values()}
        keywords = [p for p in keyword_phrases(question) if p not in option_phrases]
        lowered = question.lower()
        if "how many times" in lowered:
            tool = "action counting"
        elif _COUNT_RE.search(question):
            tool = "object counting"
        elif re.search(r"\border\b", lowered):
            tool = "order"
        else:
            tool = "none"
        if re.search(r"\b(beginning|start) of the video\b", lowered):
            when = "begin"
        elif re.search(r"\b(end of the video|at the end)\b", lowered):
            when = "end"
        else:
            when = "none"
        is_global = bool(_GLOBAL_RE.search(question))
        payload = {
            "multiple": "yes" if tool != "none" else "no",
            "keywords": keywords,
            "time": when,
            "tool": tool,
            "candidates_necessary": "no",
            "global": "yes" if is_global else "no",
        }
        return json.dumps(payload)

    def _subqueries(self, req: ChatRequest) -> str:
        question = _field(req.prompt_text, "Question").strip()
        options = _parse_candidates(_field(req.prompt_text, "Candidates"))
        subs: list[str] = []
        values = [v.strip().lower() for v in options.values()]
        if _COUNT_RE.search(question):
            subs.append(question)
        elif not options or set(values) <= _YESNO:
            if _AUX_RE.match(question):
                subs.append(question)
            else:
                subs.append(f"Does the video show {' '.join(content_tokens(question))}?")
        else:
            seen: list[str] = []
            for text in options.values():
                for part in _SPLIT_EVENTS_RE.split(text):
                    part = part.strip().rstrip(".")
                    if part and part.lower() not in seen:
                        seen.append(part.lower())
            subs = [f"Does the video show {p}?" for p in seen]
        return json.dumps({"subqueries": subs[:8]})

    def _verify(self, req: ChatRequest) -> str:
        subquery = _field(req.prompt_text, "Question")
        ((_, record),) = self._records(req.media_refs)
        if "non-negative integer" in req.prompt_text:
            return str(count_matching_actions(subquery, record))
        return "yes" if clip_verifies(subquery, record) else "no"

    def _aggregate(self, req: ChatRequest) -> str:
        lines = []
        for line in req.prompt_text.splitlines():
            m = _ROW_RE.match(line.strip())
            if m:
                clip, _frames, subquery, answer = (g.strip() for g in m.groups())
                lines.append(f"Clip {clip}: {subquery} -> {answer}")
        for line in req.prompt_text.splitlines():
            m = _TOTAL_LINE_RE.match(line.strip())
            if m:
                lines.append(f"Total over clips for {m.group(1)}: {m.group(2)}")
        return "\n".join(lines) if lines else "No verified observations."

    def _rate(self, req: ChatRequest) -> str:
        question = _field(req.prompt_text, "Question")
        ((_, record),) = self._records(req.media_refs)
        wanted = set(content_tokens(question))
        if not wanted:
            return "0"
        have = set(tokens(record.flat_text()))
        return str(round(10 * len(wanted & have) / len(wanted)))

    def _answer(self, req: ChatRequest) -> str:
        question = _field(req.prompt_text, "Question")
        options = _parse_options(req.prompt_text)
        clips = self._records(req.media_refs)
        if not options:
            if not clips:
                return "I cannot determine the answer."
            return "The clips show: " + clips[0][1].flat_text()
        unknown = "I cannot determine the answer."

        numeric = {k: _as_int(v) for k, v in options.items()}
        if all(v is not None for v in numeric.values()):
            totals = [int(m.group(2)) for line in req.prompt_text.splitlines() if (m := _TOTAL_LINE_RE.match(line.strip()))]
            value = totals[0] if totals else sum(count_matching_actions(question, rec) for _, rec in clips)
            for letter, v in numeric.items():
                if v == value:
                    return f"Answer: {letter}"
            return unknown

        lowered = {k: v.strip().lower().rstrip(".") for k, v in options.items()}
        if set(lowered.values()) <= _YESNO:
            verdict = "yes" if any(clip_verifies(question, rec) for _, rec in clips) else "no"
            for letter, v in lowered.items():
                if v == verdict:
                    return f"Answer: {letter}"
            return unknown

        if any(" then " in v for v in lowered.values()):
            for letter, text in options.items():
                parts = [p.strip() for p in _SPLIT_EVENTS_RE.split(text) if p.strip()]
                first_seen = []
                for part in parts:
                    hits = [idx for idx, rec in clips if clip_verifies(part, rec)]
                    first_seen.append(min(hits) if hits else None)
                if None not in first_seen and all(a < b for a, b in zip(first_seen, first_seen[1:])):
                    return f"Answer: {letter}"

        support = {letter: sum(clip_verifies(text, rec) for _, rec in clips) for letter, text in options.items()}
        best = max(support.values())
        if best == 0:
            return unknown
        letter = next(k for k, v in support.items() if v == best)
        return f"Answer: {letter}"


class ScriptedChatBackend:
    """Replays canned responses per task, for unit tests of single stages.

    A task maps to a string (returned every time), a list (consumed in
    order) or a callable taking the request.
    """

    def __init__(self, responses: Mapping[str, str | list[str] | Callable[[ChatRequest], str]], trace: BackendTrace | None = None) -> None:
        self.responses = {k: (list(v) if isinstance(v, list) else v) for k, v in responses.items()}
        self.trace = trace or BackendTrace()
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def chat(self, req: ChatRequest) -> str:
        with self._lock:
            self.requests.append(req)
            script = self.responses.get(req.task)
            if script is None:
                self.trace.record("chat", req.task, 0.0, len(req.prompt_text), 0, ok=False)
                raise BackendError(f"no scripted response for task {req.task!r}")
            if isinstance(script, list):
                if not script:
                    raise BackendError(f"scripted responses for task {req.task!r} exhausted")
                out = script.pop(0)
            elif callable(script):
                out = script(req)
            else:
                out = script
            self.trace.record("chat", req.task, 0.0, len(req.prompt_text), len(out))
        return out
