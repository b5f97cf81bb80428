"""Adjacency derivation and the on-disk graph format."""
from __future__ import annotations

import json
import os
from itertools import combinations
from pathlib import Path
from typing import Any, Iterable

from .types import ClipRecord, EngineConfig, PrototypeEntity, VideoGraph

GRAPH_FORMAT_VERSION = 1
GRAPH_FIELDS = ("version", "video_id", "config", "clips", "prototypes", "adjacency")
_CLIP_FIELDS = ("clip_index", "frame_start", "frame_end", "subtitle_text", "extraction")
_PROTOTYPE_FIELDS = ("prototype_id", "canonical_description", "member_forms", "node_set", "embedding")


class GraphFormatError(ValueError):
    """A graph file is unparseable, from another format version, or off-schema."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


def edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def recompute_adjacency(graph: VideoGraph | Iterable[PrototypeEntity]) -> set[tuple[int, int]]:
    """All clip pairs that share at least one prototype entity."""
    prototypes = graph.prototypes if isinstance(graph, VideoGraph) else graph
    edges: set[tuple[int, int]] = set()
    for proto in prototypes:
        for a, b in combinations(sorted(set(proto.node_set)), 2):
            edges.add((a, b))
    return edges


def graph_to_dict(graph: VideoGraph) -> dict[str, Any]:
    return {
        "version": GRAPH_FORMAT_VERSION,
        "video_id": graph.video_id,
        "config": graph.config.to_dict(),
        "clips": [c.to_dict() for c in graph.clips],
        "prototypes": [p.to_dict() for p in graph.prototypes],
        "adjacency": [list(e) for e in sorted(graph.adjacency)],
    }


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n"


def dumps_graph(graph: VideoGraph) -> str:
    return dumps_canonical(graph_to_dict(graph))


def save_graph(graph: VideoGraph, path: str | os.PathLike[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_graph(graph), encoding="utf-8")
    os.replace(tmp, path)
    return path


def _require(data: Any, key: str, where: str, kind: type | tuple[type, ...]) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise GraphFormatError(f"{where}{key}", "missing required field")
    value = data[key]
    if not isinstance(value, kind):
        raise GraphFormatError(f"{where}{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def graph_from_dict(data: Any) -> VideoGraph:
    if not isinstance(data, dict):
        raise GraphFormatError("<root>", "expected a JSON object")
    unexpected = set(data) - set(GRAPH_FIELDS)
    if unexpected:
        raise GraphFormatError(sorted(unexpected)[0], "unexpected field")
    version = _require(data, "version", "", int)
    if version != GRAPH_FORMAT_VERSION:
        raise GraphFormatError("version", f"unsupported version {version}, expected {GRAPH_FORMAT_VERSION}")
    video_id = _require(data, "video_id", "", str)
    raw_config = _require(data, "config", "", dict)
    raw_clips = _require(data, "clips", "", list)
    raw_protos = _require(data, "prototypes", "", list)
    raw_adj = _require(data, "adjacency", "", list)

    try:
        config = EngineConfig.from_dict(raw_config)
    except (TypeError, ValueError) as exc:
        raise GraphFormatError("config", str(exc)) from exc

    clips: list[ClipRecord] = []
    for i, raw in enumerate(raw_clips):
        where = f"clips[{i}]."
        for key in _CLIP_FIELDS:
            if not isinstance(raw, dict) or key not in raw:
                raise GraphFormatError(where + key, "missing required field")
        try:
            clips.append(ClipRecord.from_dict(raw))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(where.rstrip("."), f"invalid clip record ({exc})") from exc

    prototypes: list[PrototypeEntity] = []
    for i, raw in enumerate(raw_protos):
        where = f"prototypes[{i}]."
        for key in _PROTOTYPE_FIELDS:
            if not isinstance(raw, dict) or key not in raw:
                raise GraphFormatError(where + key, "missing required field")
        try:
            prototypes.append(PrototypeEntity.from_dict(raw))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(where.rstrip("."), f"invalid prototype ({exc})") from exc

    adjacency: set[tuple[int, int]] = set()
    for i, pair in enumerate(raw_adj):
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, int) for x in pair)):
            raise GraphFormatError(f"adjacency[{i}]", "expected a pair of clip indices")
        a, b = pair
        if not a < b:
            raise GraphFormatError(f"adjacency[{i}]", "pairs must be written as [a, b] with a < b")
        adjacency.add((a, b))

    return VideoGraph(video_id=video_id, config=config, clips=clips, prototypes=prototypes, adjacency=adjacency)


def loads_graph(text: str) -> VideoGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError("<root>", f"not valid JSON ({exc})") from exc
    return graph_from_dict(data)


def load_graph(path: str | os.PathLike[str]) -> VideoGraph:
    return loads_graph(Path(path).read_text(encoding="utf-8"))
