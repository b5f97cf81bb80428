"""Final answer generation and the end-to-end question pipeline."""
from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .backends.base import (
    Backends,
    BackendTrace,
    ChatBackend,
    ChatRequest,
    EmbedBackend,
    EmbedRequest,
    MediaRef,
)
from .core.types import ClipRecord, EngineConfig, VideoGraph
from .prompts import ANSWER_INSTRUCTION_MCQ, ANSWER_INSTRUCTION_OPEN
from .reasoning import (
    AggregatedContext,
    Subquery,
    VerificationMatrix,
    aggregate,
    confidence_refine,
    generate_subqueries,
    refine,
    render_totals,
    verify_all,
)
from .retrieval import (
    QueryAnalysis,
    RankedClip,
    analyze_query,
    apply_time_hint,
    embed_texts,
    naive_retrieve,
    rerank,
    retrieve_candidates,
    uniform_clips,
)

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1
RETRIEVAL_ROUTES = ("graph", "naive")
SR_STAGES = ("subqueries", "verify", "refine", "aggregate")


class AnswerParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# prompt assembly and answer parsing


def assemble_prompt(
    question: str,
    options: Mapping[str, str] | None,
    clips: Sequence[ClipRecord],
    context: AggregatedContext | None,
    video_id: str,
    include_subtitles: bool = True,
) -> ChatRequest:
    ordered = sorted(clips, key=lambda c: c.clip_index)
    parts: list[str] = []
    if context is not None:
        parts.append("Summary of verified observations:\n" + context.summary_text)
        parts.append("Verified observations:\n" + context.table_text)
        totals = render_totals(context.totals)
        if totals:
            parts.append(totals.rstrip("\n"))
    if ordered:
        markers = ["Video clips:"]
        for clip in ordered:
            markers.append(f"[Clip {clip.clip_index}] frames {clip.frame_start}-{clip.frame_end}")
            if include_subtitles and clip.subtitle_text.strip():
                markers.append("Subtitles: " + " ".join(clip.subtitle_text.split()))
        parts.append("\n".join(markers))
    block = [f"Question: {' '.join(question.split())}"]
    if options:
        block.append("Options:")
        block.extend(f"{letter}. {' '.join(text.split())}" for letter, text in options.items())
    parts.append("\n".join(block))
    parts.append(ANSWER_INSTRUCTION_MCQ if options else ANSWER_INSTRUCTION_OPEN)
    refs = tuple(MediaRef(video_id, c.frame_start, c.frame_end, c.clip_index) for c in ordered)
    return ChatRequest("\n\n".join(parts), refs, task="answer")


def parse_mcq_answer(raw: str, letters: Sequence[str]) -> str:
    """Option letter named by a free-text answer.

    Tried in order: the whole reply is a letter, "Answer: X", "(X)", and
    "X." or "X)" at the very start. Matching ignores case.
    """
    if not letters:
        raise ValueError("need at least one option letter")
    allowed = {l.upper() for l in letters}
    text = raw.strip()
    patterns = (
        r"^\(?([A-Za-z])\)?[.:)]?$",
        r"\banswer\s*(?:is)?\s*[:\-]?\s*\(?([A-Za-z])\b",
        r"\(([A-Za-z])\)",
        r"^([A-Za-z])[.)]",
    )
    for pat in patterns:
        for m in re.finditer(pat, text, re.IGNORECASE):
            letter = m.group(1).upper()
            if letter in allowed:
                return letter
    raise AnswerParseError(f"no option letter found in {raw[:120]!r}")


# ---------------------------------------------------------------------------
# per-question accounting


class _CountingChat:
    def __init__(self, inner: ChatBackend, local: BackendTrace) -> None:
        self.inner = inner
        self.trace = local

    def chat(self, req: ChatRequest) -> str:
        start = time.perf_counter()
        ok = False
        text = ""
        try:
            text = self.inner.chat(req)
            ok = True
            return text
        finally:
            self.trace.record("chat", req.task, time.perf_counter() - start, len(req.prompt_text), len(text), ok)


class _CountingEmbed:
    def __init__(self, inner: EmbedBackend, local: BackendTrace) -> None:
        self.inner = inner
        self.trace = local

    def embed(self, req: EmbedRequest) -> list[np.ndarray]:
        start = time.perf_counter()
        ok = False
        out: list[np.ndarray] = []
        try:
            out = self.inner.embed(req)
            ok = True
            return out
        finally:
            self.trace.record("embed", req.task, time.perf_counter() - start, sum(len(t) for t in req.texts), len(out), ok)


# ---------------------------------------------------------------------------
# trace


@dataclass
class AnswerTrace:
    question_id: str
    video_id: str
    question: str
    options: dict[str, str]
    retrieval: str
    strategy: str
    config: dict[str, Any]
    analysis: QueryAnalysis | None = None
    candidate_count: int | None = None
    ranked: list[RankedClip] = field(default_factory=list)
    route: str = ""
    subqueries: list[Subquery] = field(default_factory=list)
    matrix: VerificationMatrix | None = None
    ratings: list[int] | None = None
    refined: list[RankedClip] = field(default_factory=list)
    context: AggregatedContext | None = None
    final_prompt: str = ""
    media_clips: list[int] = field(default_factory=list)
    raw_answer: str = ""
    parsed_option: str | None = None
    parse_error: str | None = None
    fallback_used: bool = False
    fallback_reason: str | None = None
    stages_run: list[str] = field(default_factory=list)
    stages_skipped: list[str] = field(default_factory=list)
    error: dict[str, str] | None = None
    call_counts: dict[str, int] = field(default_factory=dict)
    # wall-clock is kept out of to_dict so persisted traces are reproducible
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "question_id": self.question_id,
            "video_id": self.video_id,
            "question": self.question,
            "options": dict(self.options),
            "retrieval": self.retrieval,
            "strategy": self.strategy,
            "config": dict(self.config),
            "analysis": self.analysis.to_dict() if self.analysis else None,
            "candidate_count": self.candidate_count,
            "route": self.route,
            "ranked": [c.to_dict() for c in self.ranked],
            "subqueries": [q.to_dict() for q in self.subqueries],
            "matrix": self.matrix.to_dict() if self.matrix else None,
            "ratings": self.ratings,
            "refined": [c.to_dict() for c in self.refined],
            "context": self.context.to_dict() if self.context else None,
            "final_prompt": self.final_prompt,
            "media_clips": list(self.media_clips),
            "raw_answer": self.raw_answer,
            "parsed_option": self.parsed_option,
            "parse_error": self.parse_error,
            "fallback_used": self.fallback_used,
            "fallback_reason": self.fallback_reason,
            "stages_run": list(self.stages_run),
            "stages_skipped": list(self.stages_skipped),
            "error": self.error,
            "call_counts": dict(sorted(self.call_counts.items())),
        }


_RANKED_SCHEMA = {
    "type": "object",
    "required": ["clip_index", "score", "matched_prototypes", "per_keyword_scores"],
    "properties": {
        "clip_index": {"type": "integer", "minimum": 0},
        "score": {"type": "number"},
        "matched_prototypes": {"type": "array", "items": {"type": "string"}},
        "per_keyword_scores": {"type": "array", "items": {"type": "number"}},
    },
}

TRACE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": [
        "schema_version", "question_id", "video_id", "question", "options", "retrieval", "strategy",
        "config", "analysis", "candidate_count", "route", "ranked", "subqueries", "matrix", "ratings",
        "refined", "context", "final_prompt", "media_clips", "raw_answer", "parsed_option",
        "parse_error", "fallback_used", "fallback_reason", "stages_run", "stages_skipped", "error",
        "call_counts",
    ],
    "properties": {
        "schema_version": {"const": TRACE_SCHEMA_VERSION},
        "question_id": {"type": "string"},
        "video_id": {"type": "string"},
        "question": {"type": "string", "minLength": 1},
        "options": {"type": "object", "additionalProperties": {"type": "string"}},
        "retrieval": {"enum": list(RETRIEVAL_ROUTES)},
        "strategy": {"enum": ["structured", "confidence", "none"]},
        "config": {"type": "object"},
        "analysis": {
            "type": ["object", "null"],
            "required": ["keywords", "multiple", "time", "tool", "candidates_necessary", "global"],
            "properties": {
                "keywords": {"type": "array", "items": {"type": "string"}},
                "time": {"enum": ["begin", "end", "none"]},
                "tool": {"enum": ["object_counting", "action_counting", "order", "none"]},
            },
        },
        "candidate_count": {"type": ["integer", "null"], "minimum": 0},
        "route": {"type": "string"},
        "ranked": {"type": "array", "items": _RANKED_SCHEMA},
        "subqueries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["text", "kind"],
                "properties": {"text": {"type": "string"}, "kind": {"enum": ["binary", "numeric"]}},
            },
        },
        "matrix": {"type": ["object", "null"], "required": ["rows", "cols", "values", "raw_texts", "flags"]},
        "ratings": {"type": ["array", "null"], "items": {"type": "integer"}},
        "refined": {"type": "array", "items": _RANKED_SCHEMA},
        "context": {
            "type": ["object", "null"],
            "required": ["summary_text", "per_clip_findings", "totals", "table_text", "from_template"],
        },
        "final_prompt": {"type": "string"},
        "media_clips": {"type": "array", "items": {"type": "integer"}},
        "raw_answer": {"type": "string"},
        "parsed_option": {"type": ["string", "null"]},
        "parse_error": {"type": ["string", "null"]},
        "fallback_used": {"type": "boolean"},
        "fallback_reason": {"type": ["string", "null"]},
        "stages_run": {"type": "array", "items": {"type": "string"}},
        "stages_skipped": {"type": "array", "items": {"type": "string"}},
        "error": {
            "type": ["object", "null"],
            "required": ["stage", "message"],
            "properties": {"stage": {"type": "string"}, "message": {"type": "string"}},
        },
        "call_counts": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
    },
}


# ---------------------------------------------------------------------------
# pipeline


class _Stage:
    """Times a pipeline stage and records it on the trace."""

    def __init__(self, trace: AnswerTrace, name: str) -> None:
        self.trace = trace
        self.name = name

    def __enter__(self) -> None:
        self.start = time.perf_counter()
        self.trace.stages_run.append(self.name)

    def __exit__(self, exc_type, exc, tb) -> bool:
        self.trace.timings[self.name] = self.trace.timings.get(self.name, 0.0) + time.perf_counter() - self.start
        if exc is not None:
            self.trace.error = {"stage": self.name, "message": f"{type(exc).__name__}: {exc}"}
            logger.warning("question %s failed in stage %s: %s", self.trace.question_id, self.name, exc)
            raise _Abort from exc
        return False


class _Abort(Exception):
    pass


def answer_question(
    question: str,
    options: Mapping[str, str] | None,
    graph: VideoGraph,
    backends: Backends,
    config: EngineConfig | None = None,
    *,
    question_id: str = "",
    retrieval: str = "graph",
    strategy: str | None = None,
) -> AnswerTrace:
    """Run one question through analysis, retrieval, reasoning and generation.

    ``retrieval`` picks graph retrieval or the plain-text baseline;
    ``strategy`` overrides the configured refinement strategy. A stage
    failure is recorded on the returned trace instead of being raised.
    """
    config = config or graph.config
    strategy = strategy or config.refinement_strategy
    if retrieval not in RETRIEVAL_ROUTES:
        raise ValueError(f"retrieval must be one of {RETRIEVAL_ROUTES}")
    options = dict(options or {})
    local = BackendTrace()
    chat = _CountingChat(backends.chat, local)
    embed = _CountingEmbed(backends.embed, local)
    trace = AnswerTrace(
        question_id=question_id,
        video_id=graph.video_id,
        question=question,
        options=options,
        retrieval=retrieval,
        strategy=strategy,
        config=config.to_dict(),
    )
    r, top_n = config.refine_max_r, config.retrieval_top_n
    started = time.perf_counter()
    try:
        if not question.strip():
            with _Stage(trace, "input"):
                raise ValueError("question must be non-empty")

        # retrieval
        if retrieval == "graph":
            with _Stage(trace, "analyze"):
                trace.analysis = analyze_query(question, options, chat)
            analysis = trace.analysis
            if analysis.global_:
                trace.route = "uniform_global"
                trace.ranked = uniform_clips(graph.clip_count, r)
            else:
                with _Stage(trace, "retrieve"):
                    kw_vectors = embed_texts(analysis.keywords, embed, "keywords")
                    candidates = retrieve_candidates(analysis, graph, config.retrieval_threshold, embed, kw_vectors)
                    trace.candidate_count = len(candidates)
                if candidates:
                    with _Stage(trace, "rerank"):
                        ranked = rerank(
                            candidates, analysis, graph, top_n, embed, kw_vectors, config.rerank_actions_scenes
                        )
                        trace.ranked = apply_time_hint(ranked, analysis.time, graph.clip_count)
                    trace.route = "graph"
                else:
                    trace.route = "uniform_empty"
                    trace.fallback_used = True
                    trace.fallback_reason = "empty_retrieval"
                    trace.ranked = uniform_clips(graph.clip_count, r)
        else:
            trace.stages_skipped.append("analyze")
            with _Stage(trace, "retrieve"):
                k = r if strategy == "none" else top_n
                trace.ranked = naive_retrieve(question, graph, k, embed)
                trace.candidate_count = graph.clip_count
            trace.route = "naive"

        # reasoning
        context: AggregatedContext | None = None
        if strategy == "structured" and trace.ranked:
            with _Stage(trace, "subqueries"):
                trace.subqueries = generate_subqueries(question, options, trace.analysis, chat)
            with _Stage(trace, "verify"):
                trace.matrix = verify_all(graph, trace.ranked, trace.subqueries, chat, config.max_workers)
            with _Stage(trace, "refine"):
                trace.refined = refine(trace.ranked, trace.matrix, r)
            if trace.refined:
                with _Stage(trace, "aggregate"):
                    context = aggregate(graph, question, trace.refined, trace.matrix, chat)
                trace.context = context
            else:
                trace.stages_skipped.append("aggregate")
                trace.fallback_used = True
                trace.fallback_reason = trace.fallback_reason or "empty_refinement"
                trace.refined = list(trace.ranked[: min(r, len(trace.ranked))])
        elif strategy == "confidence" and trace.ranked:
            trace.stages_skipped.extend(SR_STAGES)
            with _Stage(trace, "rate"):
                trace.refined, trace.ratings = confidence_refine(
                    graph, trace.ranked, question, chat, r, config.max_workers
                )
        else:
            trace.stages_skipped.extend(SR_STAGES)
            trace.refined = list(trace.ranked[:r])

        # generation
        with _Stage(trace, "generate"):
            clips = [graph.clip(c.clip_index) for c in trace.refined]
            req = assemble_prompt(question, options, clips, context, graph.video_id, config.prompt_subtitles)
            trace.final_prompt = req.prompt_text
            trace.media_clips = [m.clip_index for m in req.media_refs]
            trace.raw_answer = chat.chat(req)
        if options:
            try:
                trace.parsed_option = parse_mcq_answer(trace.raw_answer, list(options))
            except AnswerParseError as exc:
                trace.parse_error = str(exc)
    except _Abort:
        pass
    finally:
        trace.timings["total"] = time.perf_counter() - started
        trace.call_counts = local.counts_by_task()
    return trace
