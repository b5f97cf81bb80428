"""Structural checks run after a build and after a load."""
from __future__ import annotations

from typing import TYPE_CHECKING

from .similarity import SIM_TOLERANCE, cosine_similarity, reaches
from .store import recompute_adjacency
from .types import VideoGraph, entity_merge_text

if TYPE_CHECKING:
    from ..backends.base import EmbedBackend


class GraphValidationError(ValueError):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("; ".join(problems))
        self.problems = problems


def graph_problems(graph: VideoGraph, embedder: EmbedBackend | None = None) -> list[str]:
    """List every invariant violation in ``graph`` (empty when valid).

    With an embedder the semantic checks run too: each prototype's cached
    vector must match a fresh embedding of its canonical text, and every
    member must sit at or above the merge threshold against it.
    """
    problems: list[str] = []
    k = graph.config.frames_per_clip

    for pos, clip in enumerate(graph.clips):
        if clip.clip_index != pos:
            problems.append(f"clip at position {pos} has clip_index {clip.clip_index}")
        if clip.frame_end - clip.frame_start > k:
            problems.append(f"clip {clip.clip_index} spans {clip.frame_count} frames > {k}")
        if pos and clip.frame_start != graph.clips[pos - 1].frame_end:
            problems.append(f"clip {clip.clip_index} does not start where clip {pos - 1} ends")

    clip_ids = {c.clip_index for c in graph.clips}
    seen_ids: set[str] = set()
    for proto in graph.prototypes:
        pid = proto.prototype_id
        if pid in seen_ids:
            problems.append(f"duplicate prototype id {pid}")
        seen_ids.add(pid)
        if not proto.member_forms:
            problems.append(f"prototype {pid} has no members")
            continue
        member_clips = [m.clip_index for m in proto.member_forms]
        if set(proto.node_set) != set(member_clips) or len(proto.node_set) != len(set(proto.node_set)):
            problems.append(f"prototype {pid} node_set {proto.node_set} disagrees with members {member_clips}")
        if proto.node_set != sorted(proto.node_set):
            problems.append(f"prototype {pid} node_set is not in clip order")
        if not set(proto.node_set) <= clip_ids:
            problems.append(f"prototype {pid} references unknown clips")
        if proto.canonical_description != proto.member_forms[0].description:
            problems.append(f"prototype {pid} canonical description is not its first member's")
        if proto.embedding is None:
            problems.append(f"prototype {pid} has no cached embedding")

    expected = recompute_adjacency(graph)
    if graph.adjacency != expected:
        extra = sorted(graph.adjacency - expected)
        missing = sorted(expected - graph.adjacency)
        problems.append(f"adjacency mismatch: extra {extra[:5]}, missing {missing[:5]}")
    if any(a == b for a, b in graph.adjacency):
        problems.append("adjacency contains a self-edge")

    if embedder is not None and not problems:
        problems.extend(_semantic_problems(graph, embedder))
    return problems


def _semantic_problems(graph: VideoGraph, embedder: EmbedBackend) -> list[str]:
    from ..backends.base import EmbedRequest

    mode = graph.config.merge_text
    tau = graph.config.merge_threshold
    problems: list[str] = []
    for proto in graph.prototypes:
        first = proto.member_forms[0]
        canon_text = entity_merge_text(first.name, proto.canonical_description, mode)
        member_texts = [entity_merge_text(m.name, m.description, mode) for m in proto.member_forms]
        vectors = embedder.embed(EmbedRequest([canon_text, *member_texts], task="validate"))
        fresh = vectors[0]
        if cosine_similarity(fresh, proto.embedding) < 1.0 - SIM_TOLERANCE:
            problems.append(f"prototype {proto.prototype_id} cached embedding is stale")
        for member, vec in zip(proto.member_forms, vectors[1:]):
            sim = cosine_similarity(vec, proto.embedding)
            if not reaches(sim, tau):
                problems.append(
                    f"prototype {proto.prototype_id} member {member.name!r} in clip {member.clip_index} "
                    f"has similarity {sim:.4f} < {tau}"
                )
    return problems


def check_graph(graph: VideoGraph, embedder: EmbedBackend | None = None) -> None:
    problems = graph_problems(graph, embedder)
    if problems:
        raise GraphValidationError(problems)
