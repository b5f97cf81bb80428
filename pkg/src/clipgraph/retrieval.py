"""Online, query-dependent retrieval over a built graph.

A question is first analysed into keywords and task flags, keywords pull
in every clip of every prototype they match, and the pooled clips are
re-ranked by how well their own extracted text covers the keywords.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .backends.base import ChatBackend, ChatRequest, EmbedBackend, EmbedRequest
from .core.similarity import cosine_matrix, exceeds
from .core.types import VideoGraph
from .jsonparse import NoJSONError, extract_json
from .prompts import analysis_prompt

logger = logging.getLogger(__name__)

TIME_HINTS = ("begin", "end", "none")
TOOLS = ("object_counting", "action_counting", "order", "none")
OUTSIDE_HINT_FACTOR = 0.5
# scores closer than this are treated as tied and ordered by clip index
RANK_DECIMALS = 9


class AnalysisError(ValueError):
    def __init__(self, message: str, raw: str = "") -> None:
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class QueryAnalysis:
    keywords: tuple[str, ...]
    multiple: bool = False
    time: str = "none"
    tool: str = "none"
    candidates_necessary: bool = False
    global_: bool = False

    def __post_init__(self) -> None:
        if self.time not in TIME_HINTS:
            raise ValueError(f"time must be one of {TIME_HINTS}")
        if self.tool not in TOOLS:
            raise ValueError(f"tool must be one of {TOOLS}")
        if not self.keywords and not self.global_:
            raise ValueError("keywords may only be empty for global questions")

    def to_dict(self) -> dict[str, Any]:
        return {
            "keywords": list(self.keywords),
            "multiple": self.multiple,
            "time": self.time,
            "tool": self.tool,
            "candidates_necessary": self.candidates_necessary,
            "global": self.global_,
        }


@dataclass
class RankedClip:
    clip_index: int
    score: float = 0.0
    matched_prototypes: list[str] = field(default_factory=list)
    per_keyword_scores: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_index": self.clip_index,
            "score": round(self.score, 9),
            "matched_prototypes": list(self.matched_prototypes),
            "per_keyword_scores": [round(s, 9) for s in self.per_keyword_scores],
        }


def rank_key(score: float, clip_index: int) -> tuple[float, int]:
    return (-round(score, RANK_DECIMALS), clip_index)


# ---------------------------------------------------------------------------
# analysis

_BARE_NONE_RE = re.compile(r'(:\s*)(none|null)(\s*[,}])', re.IGNORECASE)


def _as_bool(value: Any, key: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("yes", "true", "y", "1"):
        return True
    if text in ("no", "false", "n", "0", "none", ""):
        return False
    logger.warning("analysis field %s has non yes/no value %r; treating as no", key, value)
    return False


def _as_enum(value: Any, allowed: Sequence[str], key: str) -> str:
    text = re.sub(r"[\s\-]+", "_", str(value if value is not None else "none").strip().lower())
    if text == "beginning" or text == "start":
        text = "begin"
    if text in allowed:
        return text
    logger.warning("analysis field %s has unknown value %r; using none", key, value)
    return "none"


def parse_analysis(raw: str) -> QueryAnalysis:
    """Parse the analyser's JSON. Bare ``none`` literals are tolerated."""
    cleaned = _BARE_NONE_RE.sub(lambda m: f'{m.group(1)}"none"{m.group(3)}', raw)
    try:
        data = extract_json(cleaned, dict)
    except NoJSONError as exc:
        raise AnalysisError("analysis response contains no JSON object", raw) from exc
    data = {str(k).strip().lower(): v for k, v in data.items()}
    is_global = _as_bool(data.get("global", "no"), "global")
    keywords = data.get("keywords")
    if isinstance(keywords, str):
        keywords = [keywords]
    if keywords is None:
        keywords = []
    if not isinstance(keywords, list):
        raise AnalysisError("analysis 'keywords' must be a list", raw)
    cleaned_kw: list[str] = []
    for kw in keywords:
        kw = str(kw).strip()
        if kw and kw not in cleaned_kw:
            cleaned_kw.append(kw)
    if not cleaned_kw and not is_global:
        raise AnalysisError("analysis has no keywords and the question is not global", raw)
    return QueryAnalysis(
        keywords=tuple(cleaned_kw),
        multiple=_as_bool(data.get("multiple", "no"), "multiple"),
        time=_as_enum(data.get("time"), TIME_HINTS, "time"),
        tool=_as_enum(data.get("tool"), TOOLS, "tool"),
        candidates_necessary=_as_bool(data.get("candidates_necessary", "no"), "candidates_necessary"),
        global_=is_global,
    )


def analyze_query(question: str, options: Mapping[str, str] | None, chat: ChatBackend) -> QueryAnalysis:
    if not question.strip():
        raise ValueError("question must be non-empty")
    raw = chat.chat(ChatRequest(analysis_prompt(question, options), response_format_hint="json", task="analyze"))
    return parse_analysis(raw)


# ---------------------------------------------------------------------------
# candidate collection and ranking


def embed_texts(texts: Sequence[str], embedder: EmbedBackend, task: str) -> np.ndarray:
    return np.stack(embedder.embed(EmbedRequest(list(texts), task=task)))


def prototype_bank(graph: VideoGraph, embedder: EmbedBackend | None = None) -> np.ndarray:
    missing = [p for p in graph.prototypes if p.embedding is None]
    if missing:
        if embedder is None:
            raise ValueError("graph has prototypes without cached embeddings")
        vectors = embed_texts([p.canonical_description for p in missing], embedder, "prototype")
        for proto, vec in zip(missing, vectors):
            proto.embedding = vec
    return np.stack([p.embedding for p in graph.prototypes])


def retrieve_candidates(
    analysis: QueryAnalysis,
    graph: VideoGraph,
    threshold: float,
    embedder: EmbedBackend,
    keyword_vectors: np.ndarray | None = None,
) -> list[RankedClip]:
    """Every clip of every prototype whose canonical description beats ``threshold`` for some keyword.

    The result is unscored and ordered by clip index.
    """
    if not analysis.keywords or not graph.prototypes:
        return []
    if keyword_vectors is None:
        keyword_vectors = embed_texts(analysis.keywords, embedder, "keywords")
    sims = cosine_matrix(keyword_vectors, prototype_bank(graph, embedder))
    hits: dict[int, list[str]] = {}
    for p_idx, proto in enumerate(graph.prototypes):
        if any(exceeds(float(sims[k, p_idx]), threshold) for k in range(sims.shape[0])):
            for node in proto.node_set:
                witnesses = hits.setdefault(node, [])
                if proto.prototype_id not in witnesses:
                    witnesses.append(proto.prototype_id)
    return [RankedClip(i, matched_prototypes=hits[i]) for i in sorted(hits)]


def rerank(
    candidates: Sequence[RankedClip],
    analysis: QueryAnalysis,
    graph: VideoGraph,
    top_n: int,
    embedder: EmbedBackend,
    keyword_vectors: np.ndarray | None = None,
    include_actions_scenes: bool = True,
) -> list[RankedClip]:
    """Score each candidate by the mean, over keywords, of its best-matching info string; keep the top N."""
    if not candidates:
        return []
    if keyword_vectors is None:
        keyword_vectors = embed_texts(analysis.keywords, embedder, "keywords")
    info = {c.clip_index: graph.clip(c.clip_index).info_strings(include_actions_scenes) for c in candidates}
    unique = sorted({s for strings in info.values() for s in strings if s.strip()})
    row_of = {s: i for i, s in enumerate(unique)}
    sims = cosine_matrix(keyword_vectors, embed_texts(unique, embedder, "rerank")) if unique else None

    scored: list[RankedClip] = []
    for cand in candidates:
        cols = [row_of[s] for s in info[cand.clip_index] if s in row_of]
        if cols and sims is not None:
            per_kw = [float(np.max(sims[k, cols])) for k in range(sims.shape[0])]
        else:
            per_kw = [0.0] * len(analysis.keywords)
        score = float(np.mean(per_kw)) if per_kw else 0.0
        scored.append(RankedClip(cand.clip_index, score, list(cand.matched_prototypes), per_kw))
    scored.sort(key=lambda c: rank_key(c.score, c.clip_index))
    return scored[:top_n]


def hint_range(time_hint: str, clip_count: int) -> range:
    """Clip indices favoured by a time hint: the first or last quarter of the video."""
    quarter = math.ceil(clip_count / 4)
    if time_hint == "begin":
        return range(0, quarter)
    if time_hint == "end":
        return range(clip_count - quarter, clip_count)
    return range(0, clip_count)


def apply_time_hint(ranked: Sequence[RankedClip], time_hint: str, clip_count: int) -> list[RankedClip]:
    if time_hint not in TIME_HINTS:
        raise ValueError(f"time hint must be one of {TIME_HINTS}")
    if time_hint == "none":
        return list(ranked)
    keep = hint_range(time_hint, clip_count)
    out = []
    for c in ranked:
        if c.clip_index in keep:
            out.append(c)
        else:
            out.append(
                RankedClip(
                    c.clip_index,
                    c.score * OUTSIDE_HINT_FACTOR,
                    list(c.matched_prototypes),
                    [s * OUTSIDE_HINT_FACTOR for s in c.per_keyword_scores],
                )
            )
    out.sort(key=lambda c: rank_key(c.score, c.clip_index))
    return out


def uniform_clips(clip_count: int, r: int) -> list[RankedClip]:
    """Evenly strided clips for questions about the whole video, at most ``r`` of them."""
    if clip_count < 1:
        return []
    stride = math.ceil(clip_count / r)
    return [RankedClip(i) for i in range(0, clip_count, stride)][:r]


def naive_retrieve(question: str, graph: VideoGraph, k: int, embedder: EmbedBackend) -> list[RankedClip]:
    """Baseline: every clip's text as one document, scored against the raw question."""
    texts = {c.clip_index: c.plain_text() for c in graph.clips}
    indexed = [i for i, t in texts.items() if t.strip()]
    scores = {i: 0.0 for i in texts}
    if indexed:
        vectors = embed_texts([question] + [texts[i] for i in indexed], embedder, "naive")
        sims = cosine_matrix(vectors[:1], vectors[1:])[0]
        scores.update({i: float(s) for i, s in zip(indexed, sims)})
    ranked = [RankedClip(i, s, [], [s]) for i, s in scores.items()]
    ranked.sort(key=lambda c: rank_key(c.score, c.clip_index))
    return ranked[:k]
