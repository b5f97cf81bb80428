"""Offline, query-independent graph construction.

Clips are described by the chat model one at a time, entities are merged
greedily into prototypes by description similarity, and every clip is
linked to all earlier clips that share a prototype with it.
"""
from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .backends.base import BackendError, Backends, ChatBackend, ChatRequest, EmbedBackend, EmbedRequest, MediaRef
from .core.similarity import cosine_matrix, quantize_embedding, reaches
from .core.store import edge
from .core.types import (
    Action,
    ClipRecord,
    EngineConfig,
    Entity,
    ExtractionRecord,
    PrototypeEntity,
    VideoGraph,
    entity_merge_text,
)
from .jsonparse import NoJSONError, extract_json
from .prompts import extraction_prompt

logger = logging.getLogger(__name__)


class ExtractionError(ValueError):
    def __init__(self, message: str, raw: str = "", clip_index: int | None = None) -> None:
        where = f"clip {clip_index}: " if clip_index is not None else ""
        super().__init__(where + message)
        self.raw = raw
        self.clip_index = clip_index


def segment_video(frame_count: int, frames_per_clip: int) -> list[tuple[int, int]]:
    """Half-open frame ranges of width ``frames_per_clip`` covering ``[0, frame_count)``."""
    if frame_count < 1 or frames_per_clip < 1:
        raise ValueError("frame_count and frames_per_clip must be positive")
    n = math.ceil(frame_count / frames_per_clip)
    return [(i * frames_per_clip, min((i + 1) * frames_per_clip, frame_count)) for i in range(n)]


# ---------------------------------------------------------------------------
# extraction

_NAME_KEYS = ("entity name", "entity_name", "name", "entity")
_DESC_KEYS = ("description", "desc", "action description", "action")
_SCENE_KEYS = ("location", "scene", "description")


def _pick(item: dict[str, Any], keys: Sequence[str]) -> str | None:
    for key in keys:
        value = item.get(key)
        if isinstance(value, str):
            return value.strip()
    return None


def _as_list(data: dict[str, Any], key: str, raw: str) -> list[Any]:
    value = data.get(key)
    if value is None:
        return []
    if not isinstance(value, list):
        raise ExtractionError(f"'{key}' must be a list, got {type(value).__name__}", raw)
    return value


def parse_extraction(raw: str) -> ExtractionRecord:
    """Parse a clip-description response into an :class:`ExtractionRecord`.

    Accepts the JSON bare, fenced or surrounded by prose, optionally wrapped
    in ``{"info": {...}}``. Missing sections become empty; an entity without
    a description borrows its name. Anything more ambiguous is an error.
    """
    try:
        data = extract_json(raw, dict)
    except NoJSONError as exc:
        raise ExtractionError("response contains no JSON object", raw) from exc
    if isinstance(data.get("info"), dict):
        data = data["info"]
    data = {str(k).strip().lower(): v for k, v in data.items()}

    entities: list[Entity] = []
    for item in _as_list(data, "entities", raw):
        if isinstance(item, str) and item.strip():
            entities.append(Entity(item.strip(), item.strip()))
            continue
        if not isinstance(item, dict):
            raise ExtractionError(f"entity entry {item!r} is not an object", raw)
        name = _pick(item, _NAME_KEYS)
        if not name:
            raise ExtractionError(f"entity entry {item!r} has no name", raw)
        desc = _pick(item, ("description", "desc")) or name
        entities.append(Entity(name, desc))

    actions: list[Action] = []
    for item in _as_list(data, "actions", raw):
        if not isinstance(item, dict):
            raise ExtractionError(f"action entry {item!r} is not an object", raw)
        name = _pick(item, _NAME_KEYS)
        desc = _pick(item, _DESC_KEYS)
        if name is None and desc is None and len(item) == 1:
            # the prompt's own shorthand: {"<entity name>": "<action description>"}
            ((key, value),) = item.items()
            if isinstance(value, str):
                name, desc = str(key).strip(), value.strip()
        if not name or not desc:
            raise ExtractionError(f"action entry {item!r} needs an entity name and a description", raw)
        actions.append(Action(name, desc))

    scenes: list[str] = []
    for item in _as_list(data, "scenes", raw):
        loc = item.strip() if isinstance(item, str) else _pick(item, _SCENE_KEYS) if isinstance(item, dict) else None
        if not loc:
            raise ExtractionError(f"scene entry {item!r} has no location", raw)
        scenes.append(loc)

    record = ExtractionRecord(tuple(entities), tuple(actions), tuple(scenes))
    for orphan in record.orphan_actions():
        logger.warning("action %r refers to unknown entity %r; keeping it", orphan.description, orphan.entity_name)
    return record


def media_ref(video_id: str, clip: ClipRecord) -> MediaRef:
    return MediaRef(video_id, clip.frame_start, clip.frame_end, clip.clip_index)


def extract_clip(clip: ClipRecord, chat: ChatBackend, video_id: str) -> ExtractionRecord:
    req = ChatRequest(
        prompt_text=extraction_prompt(clip.subtitle_text),
        media_refs=(media_ref(video_id, clip),),
        response_format_hint="json",
        task="extract",
    )
    raw = chat.chat(req)
    try:
        return parse_extraction(raw)
    except ExtractionError as exc:
        raise ExtractionError(str(exc), raw, clip.clip_index) from exc


# ---------------------------------------------------------------------------
# merging and wiring


@dataclass(frozen=True)
class MergeOutcome:
    decision: str  # "merged_into" | "created_new"
    prototype_id: str
    best_score: float | None
    best_prototype: str | None

    @property
    def merged(self) -> bool:
        return self.decision == "merged_into"


def merge_entity(
    name: str,
    description: str,
    prototypes: list[PrototypeEntity],
    merge_threshold: float,
    embedder: EmbedBackend | None,
    clip_index: int,
    *,
    vector: np.ndarray | None = None,
    merge_text: str = "description",
) -> MergeOutcome:
    """Assign one extracted entity to its best-matching prototype or found a new one.

    The incoming text is compared against canonical descriptions only.
    Ties on the best score go to the earliest-created prototype. The
    prototype list is mutated only after every score is known.
    """
    if not description.strip():
        raise ValueError("entity description must be non-empty")
    if vector is None:
        if embedder is None:
            raise ValueError("merge_entity needs an embedder or a precomputed vector")
        (vector,) = embedder.embed(EmbedRequest([entity_merge_text(name, description, merge_text)], task="merge"))

    best_score: float | None = None
    best_idx: int | None = None
    if prototypes:
        bank = np.stack([p.embedding for p in prototypes])
        scores = cosine_matrix(np.asarray(vector)[None, :], bank)[0]
        best_idx = int(np.argmax(scores))  # first maximum = earliest prototype
        best_score = float(scores[best_idx])

    if best_idx is not None and reaches(best_score, merge_threshold):
        target = prototypes[best_idx]
        target.add_member(clip_index, name, description)
        return MergeOutcome("merged_into", target.prototype_id, best_score, target.prototype_id)

    proto = PrototypeEntity(
        prototype_id=f"u{len(prototypes):04d}",
        canonical_description=description,
        embedding=quantize_embedding(vector),
    )
    proto.add_member(clip_index, name, description)
    prototypes.append(proto)
    return MergeOutcome(
        "created_new", proto.prototype_id, best_score, None if best_idx is None else prototypes[best_idx].prototype_id
    )


def connect_node(clip_index: int, prototype: PrototypeEntity, adjacency: set[tuple[int, int]]) -> set[tuple[int, int]]:
    """Link ``clip_index`` to every other clip holding ``prototype``; returns the edges that were new."""
    if clip_index not in prototype.node_set:
        raise ValueError(f"prototype {prototype.prototype_id} does not contain clip {clip_index}")
    added = set()
    for other in prototype.node_set:
        if other == clip_index:
            continue
        e = edge(clip_index, other)
        if e not in adjacency:
            adjacency.add(e)
            added.add(e)
    return added


def _merge_items(record: ExtractionRecord, config: EngineConfig) -> list[tuple[str, str]]:
    items = [(e.name, e.description) for e in record.entities]
    if config.merge_scenes_actions:
        items += [(a.entity_name, a.description) for a in record.actions]
        items += [(s, s) for s in record.scenes]
    return [(n, d) for n, d in items if d.strip()]


def build_graph(
    video_id: str,
    frame_count: int,
    subtitles: Sequence[str] | None,
    backends: Backends,
    config: EngineConfig | None = None,
    *,
    lenient: bool = False,
) -> VideoGraph:
    """Describe every clip once, then merge entities and wire edges in clip order.

    Extraction calls run concurrently (up to ``config.max_workers``), but
    merging is applied by this thread alone, strictly in clip order, so the
    result never depends on scheduling. With ``lenient`` a clip whose
    description cannot be parsed is kept without an extraction record
    instead of aborting the build.
    """
    config = config or EngineConfig()
    ranges = segment_video(frame_count, config.frames_per_clip)
    subtitles = list(subtitles or [])
    if subtitles and len(subtitles) != len(ranges):
        raise ValueError(f"got {len(subtitles)} subtitle entries for {len(ranges)} clips")
    clips = [
        ClipRecord(i, start, end, subtitles[i] if subtitles else "")
        for i, (start, end) in enumerate(ranges)
    ]

    def run(clip: ClipRecord) -> ExtractionRecord | ExtractionError:
        try:
            return extract_clip(clip, backends.chat, video_id)
        except ExtractionError as exc:
            return exc
        except BackendError as exc:
            return ExtractionError(f"backend failed: {exc}", "", clip.clip_index)

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        results = list(pool.map(run, clips))

    graph = VideoGraph(video_id=video_id, config=config, clips=clips)
    for clip, result in zip(clips, results):
        if isinstance(result, ExtractionError):
            if not lenient:
                raise result
            logger.warning("skipping clip %d of %s: %s", clip.clip_index, video_id, result)
            continue
        clip.extraction = result
        items = _merge_items(result, config)
        if not items:
            continue
        texts = [entity_merge_text(n, d, config.merge_text) for n, d in items]
        vectors = backends.embed.embed(EmbedRequest(texts, task="merge"))
        for (name, desc), vec in zip(items, vectors):
            outcome = merge_entity(
                name, desc, graph.prototypes, config.merge_threshold, None, clip.clip_index,
                vector=vec, merge_text=config.merge_text,
            )
            connect_node(clip.clip_index, graph.prototype(outcome.prototype_id), graph.adjacency)
    return graph


# ---------------------------------------------------------------------------
# subtitle ingestion

_TIME_RE = re.compile(r"(\d+):(\d{2}):(\d{2})[,.](\d{1,3})")


def _seconds(stamp: str) -> float:
    m = _TIME_RE.fullmatch(stamp.strip())
    if not m:
        raise ValueError(f"bad caption timestamp {stamp!r}")
    h, mnt, s, ms = m.groups()
    return int(h) * 3600 + int(mnt) * 60 + int(s) + int(ms.ljust(3, "0")) / 1000


def parse_timed_captions(text: str) -> list[tuple[float, float, str]]:
    """Parse SRT/WebVTT-style cues into ``(start_s, end_s, text)``."""
    cues: list[tuple[float, float, str]] = []
    for block in re.split(r"\n\s*\n", text.replace("\r\n", "\n").strip()):
        lines = [ln for ln in block.split("\n") if ln.strip()]
        for i, line in enumerate(lines):
            if "-->" in line:
                start, end = (part.split()[0] if part.split() else part for part in line.split("-->"))
                body = " ".join(lines[i + 1 :]).strip()
                if body:
                    cues.append((_seconds(start), _seconds(end), body))
                break
    return cues


def slice_captions(
    cues: Sequence[tuple[float, float, str]], clip_count: int, frames_per_clip: int, sample_fps: float
) -> list[str]:
    """Text of every cue overlapping clip ``i``'s span ``[i*K/fps, (i+1)*K/fps)``."""
    span = frames_per_clip / sample_fps
    out: list[list[str]] = [[] for _ in range(clip_count)]
    for start, end, body in cues:
        first = max(0, int(start // span))
        for i in range(first, clip_count):
            lo, hi = i * span, (i + 1) * span
            if start >= hi:
                continue
            if end <= lo and not (start == end == lo):
                break
            out[i].append(body)
    return [" ".join(parts) for parts in out]


def load_subtitles(path: str | Path, clip_count: int, config: EngineConfig) -> list[str]:
    """Per-clip subtitles from a directory of per-clip text files or one timed caption file."""
    path = Path(path)
    if path.is_dir():
        texts = [""] * clip_count
        for file in sorted(path.glob("*.txt")):
            m = re.search(r"(\d+)\.txt$", file.name)
            if m and int(m.group(1)) < clip_count:
                texts[int(m.group(1))] = file.read_text(encoding="utf-8").strip()
        return texts
    cues = parse_timed_captions(path.read_text(encoding="utf-8"))
    return slice_captions(cues, clip_count, config.frames_per_clip, config.sample_fps)
