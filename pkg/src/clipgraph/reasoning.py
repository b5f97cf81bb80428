"""Structured reasoning over retrieved clips.

The model breaks the question into yes/no or counting subqueries, answers
each one on each retrieved clip, and only clips with at least one positive
answer survive. Their positive answers become the context for the final
prompt.
"""
from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .backends.base import ChatBackend, ChatRequest, MediaRef
from .core.types import VideoGraph
from .jsonparse import NoJSONError, extract_json
from .prompts import (
    AGGREGATE_PROMPT,
    CONFIDENCE_PROMPT,
    VERIFY_BINARY_PROMPT,
    VERIFY_NUMERIC_PROMPT,
    subquery_prompt,
)
from .retrieval import QueryAnalysis, RankedClip, rank_key

logger = logging.getLogger(__name__)

MAX_SUBQUERIES = 8
MAX_NUMERIC = 99
MAX_RATING = 10

_NUMERIC_RE = re.compile(r"\b(how many|how much|count|number of)\b", re.IGNORECASE)
_TIME_POSITION_RE = re.compile(
    r"\b(at|in|near|towards?|by) the (very )?(beginning|start|middle|end)\b|\b(beginning|end) of the video\b",
    re.IGNORECASE,
)
_YES_NO_RE = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)
_INT_RE = re.compile(r"\d+")
_ZERO_RE = re.compile(r"^\W*(none|zero|no|never)\b", re.IGNORECASE)


class SubqueryError(ValueError):
    def __init__(self, message: str, raw: str = "") -> None:
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class Subquery:
    text: str
    kind: str  # "binary" | "numeric"

    def to_dict(self) -> dict[str, str]:
        return {"text": self.text, "kind": self.kind}


def classify_subquery(text: str) -> str:
    return "numeric" if _NUMERIC_RE.search(text) else "binary"


def _collect_strings(data: Any) -> list[str]:
    """Question strings from the loose shapes models use for a list of subqueries."""
    if isinstance(data, str):
        return [data]
    if isinstance(data, list):
        out: list[str] = []
        for item in data:
            out.extend(_collect_strings(item))
        return out
    if isinstance(data, dict):
        for key in ("question", "subquery", "sub_question", "sub-question", "text", "query"):
            if isinstance(data.get(key), str):
                return [data[key]]
        out = []
        for value in data.values():
            if isinstance(value, (str, list, dict)):
                out.extend(_collect_strings(value))
        return out
    return []


def parse_subqueries(raw: str) -> list[Subquery]:
    try:
        data = extract_json(raw)
    except NoJSONError as exc:
        raise SubqueryError("subquery response contains no JSON", raw) from exc
    seen: set[str] = set()
    out: list[Subquery] = []
    for text in _collect_strings(data):
        text = " ".join(text.split())
        if not text:
            continue
        if _TIME_POSITION_RE.search(text):
            logger.warning("dropping subquery that names a time position: %r", text)
            continue
        key = text.lower().rstrip("?. ")
        if key in seen:
            continue
        seen.add(key)
        out.append(Subquery(text, classify_subquery(text)))
        if len(out) == MAX_SUBQUERIES:
            break
    if not out:
        raise SubqueryError("no usable subqueries in response", raw)
    return out


def generate_subqueries(
    question: str,
    options: Mapping[str, str] | None,
    analysis: QueryAnalysis | None,
    chat: ChatBackend,
) -> list[Subquery]:
    if not question.strip():
        raise ValueError("question must be non-empty")
    keywords = list(analysis.keywords) if analysis else []
    prompt = subquery_prompt(question, options, keywords)
    raw = chat.chat(ChatRequest(prompt, response_format_hint="json", task="subqueries"))
    return parse_subqueries(raw)


# ---------------------------------------------------------------------------
# verification


def parse_binary(text: str) -> int | None:
    m = _YES_NO_RE.match(text)
    if not m:
        return None
    return 1 if m.group(1).lower() == "yes" else 0


def parse_numeric(text: str) -> int | None:
    m = _INT_RE.search(text)
    if m:
        return min(int(m.group()), MAX_NUMERIC)
    if _ZERO_RE.match(text):
        return 0
    return None


@dataclass
class VerificationMatrix:
    rows: list[int]
    cols: list[Subquery]
    values: list[list[int]]
    raw_texts: list[list[str]]
    flags: list[list[str]] = field(default_factory=list)

    def row(self, clip_index: int) -> list[int]:
        return self.values[self.rows.index(clip_index)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": list(self.rows),
            "cols": [q.to_dict() for q in self.cols],
            "values": [list(r) for r in self.values],
            "raw_texts": [list(r) for r in self.raw_texts],
            "flags": [list(r) for r in self.flags],
        }


def verify_one(ref: MediaRef, subquery: Subquery, chat: ChatBackend) -> tuple[int, str, str]:
    """One matrix cell: (value, raw answer, flag). Never raises."""
    template = VERIFY_NUMERIC_PROMPT if subquery.kind == "numeric" else VERIFY_BINARY_PROMPT
    try:
        raw = chat.chat(ChatRequest(template.format(subquery=subquery.text), (ref,), task="verify"))
    except Exception as exc:  # a failed cell must not take the row down
        logger.warning("verification of clip %d failed: %s", ref.clip_index, exc)
        return 0, "", f"error: {exc}"
    value = parse_numeric(raw) if subquery.kind == "numeric" else parse_binary(raw)
    if value is None:
        return 0, raw, "unparseable"
    return value, raw, ""


def _ref(graph: VideoGraph, clip_index: int) -> MediaRef:
    clip = graph.clip(clip_index)
    return MediaRef(graph.video_id, clip.frame_start, clip.frame_end, clip.clip_index)


def verify_clip(graph: VideoGraph, clip_index: int, subqueries: Sequence[Subquery], chat: ChatBackend) -> tuple[list[int], list[str], list[str]]:
    if not subqueries:
        raise ValueError("need at least one subquery")
    ref = _ref(graph, clip_index)
    cells = [verify_one(ref, q, chat) for q in subqueries]
    return [c[0] for c in cells], [c[1] for c in cells], [c[2] for c in cells]


def verify_all(
    graph: VideoGraph,
    clips: Sequence[RankedClip],
    subqueries: Sequence[Subquery],
    chat: ChatBackend,
    max_workers: int = 4,
) -> VerificationMatrix:
    """Fill the clip x subquery matrix; cells run concurrently and are placed by position."""
    if not subqueries:
        raise ValueError("need at least one subquery")
    rows = [c.clip_index for c in clips]
    jobs = [(i, j) for i in range(len(rows)) for j in range(len(subqueries))]
    refs = [_ref(graph, idx) for idx in rows]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        cells = list(pool.map(lambda ij: verify_one(refs[ij[0]], subqueries[ij[1]], chat), jobs))
    values = [[0] * len(subqueries) for _ in rows]
    raws = [[""] * len(subqueries) for _ in rows]
    flags = [[""] * len(subqueries) for _ in rows]
    for (i, j), (v, raw, flag) in zip(jobs, cells):
        values[i][j], raws[i][j], flags[i][j] = v, raw, flag
    return VerificationMatrix(rows, list(subqueries), values, raws, flags)


# ---------------------------------------------------------------------------
# refinement


def support(row: Sequence[int]) -> int:
    return sum(min(v, 1) for v in row)


def refine(ranked: Sequence[RankedClip], matrix: VerificationMatrix, r: int) -> list[RankedClip]:
    """Keep clips with a positive answer to some subquery, at most ``r``, in temporal order.

    Over the cap, clips with more positive subqueries win; then the higher
    re-rank score; then the earlier clip.
    """
    if r < 1:
        raise ValueError("r must be positive")
    survivors = [c for c in ranked if any(v > 0 for v in matrix.row(c.clip_index))]
    if len(survivors) > r:
        survivors.sort(key=lambda c: (-support(matrix.row(c.clip_index)),) + rank_key(c.score, c.clip_index))
        survivors = survivors[:r]
    return sorted(survivors, key=lambda c: c.clip_index)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class AggregatedContext:
    summary_text: str
    per_clip_findings: list[tuple[int, str, int]]
    totals: dict[str, int]
    table_text: str
    from_template: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "summary_text": self.summary_text,
            "per_clip_findings": [list(f) for f in self.per_clip_findings],
            "totals": dict(self.totals),
            "table_text": self.table_text,
            "from_template": self.from_template,
        }


def _cell(text: str) -> str:
    return " ".join(text.replace("|", "/").split())


def render_findings(graph: VideoGraph, findings: Sequence[tuple[int, str, int]], kinds: Mapping[str, str]) -> str:
    lines = ["| clip | frames | subquery | answer |", "|---|---|---|---|"]
    for clip_index, text, value in findings:
        clip = graph.clip(clip_index)
        answer = "yes" if kinds[text] == "binary" else str(value)
        lines.append(f"| {clip_index} | {clip.frame_start}-{clip.frame_end} | {_cell(text)} | {answer} |")
    return "\n".join(lines)


def render_totals(totals: Mapping[str, int]) -> str:
    if not totals:
        return ""
    return "Totals:\n" + "\n".join(f"- {_cell(q)}: {n}" for q, n in totals.items()) + "\n"


def template_summary(graph: VideoGraph, findings: Sequence[tuple[int, str, int]], kinds: Mapping[str, str], totals: Mapping[str, int]) -> str:
    lines = []
    for clip_index, text, value in findings:
        clip = graph.clip(clip_index)
        answer = "yes" if kinds[text] == "binary" else str(value)
        lines.append(f"Clip {clip_index} (frames {clip.frame_start}-{clip.frame_end}): {text} -> {answer}")
    for text, n in totals.items():
        lines.append(f"Total over clips for {text}: {n}")
    return "\n".join(lines)


def aggregate(
    graph: VideoGraph,
    question: str,
    refined: Sequence[RankedClip],
    matrix: VerificationMatrix,
    chat: ChatBackend | None = None,
) -> AggregatedContext:
    """Collect the positive answers of refined clips and have the model summarise them.

    Without a chat backend, or when the call fails, the summary is rendered
    from a fixed template instead.
    """
    if not refined:
        raise ValueError("aggregation needs at least one refined clip")
    kinds = {q.text: q.kind for q in matrix.cols}
    order = sorted(c.clip_index for c in refined)
    findings: list[tuple[int, str, int]] = []
    for clip_index in order:
        for q, v in zip(matrix.cols, matrix.row(clip_index)):
            if v > 0:
                findings.append((clip_index, q.text, int(v)))
    totals = {
        q.text: sum(int(matrix.row(i)[j]) for i in order)
        for j, q in enumerate(matrix.cols)
        if q.kind == "numeric"
    }
    table = render_findings(graph, findings, kinds)
    if chat is not None:
        prompt = AGGREGATE_PROMPT.format(table=table, totals=render_totals(totals), question=question)
        refs = tuple(_ref(graph, i) for i in order)
        try:
            summary = chat.chat(ChatRequest(prompt, refs, task="aggregate")).strip()
            if summary:
                return AggregatedContext(summary, findings, totals, table, False)
            logger.warning("empty aggregation response; using template")
        except Exception as exc:
            logger.warning("aggregation call failed (%s); using template", exc)
    return AggregatedContext(template_summary(graph, findings, kinds, totals), findings, totals, table, True)


# ---------------------------------------------------------------------------
# confidence-based alternative


def parse_rating(text: str) -> int:
    m = _INT_RE.search(text)
    return min(int(m.group()), MAX_RATING) if m else 0


def confidence_refine(
    graph: VideoGraph,
    ranked: Sequence[RankedClip],
    question: str,
    chat: ChatBackend,
    r: int,
    max_workers: int = 4,
) -> tuple[list[RankedClip], list[int]]:
    """Let the model rate each clip 0-10 and keep the ``r`` best; ties keep re-rank order.

    Returns the kept clips (best first) and the rating of every input clip.
    """
    refs = [_ref(graph, c.clip_index) for c in ranked]
    prompt = CONFIDENCE_PROMPT.format(question=question)

    def rate(ref: MediaRef) -> int:
        try:
            return parse_rating(chat.chat(ChatRequest(prompt, (ref,), task="rate")))
        except Exception as exc:
            logger.warning("rating of clip %d failed: %s", ref.clip_index, exc)
            return 0

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        ratings = list(pool.map(rate, refs))
    order = sorted(range(len(ranked)), key=lambda i: (-ratings[i], i))
    return [ranked[i] for i in order[:r]], ratings
