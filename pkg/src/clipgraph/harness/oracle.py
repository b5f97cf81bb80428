"""Brute-force reference implementations used to cross-check the engine."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core.similarity import cosine_similarity, exceeds
from ..core.types import VideoGraph


def candidate_oracle(keyword_vectors: Sequence[np.ndarray], graph: VideoGraph, threshold: float) -> dict[int, set[str]]:
    """Candidate clips by a plain loop over keywords, prototypes and their nodes.

    Maps each retrieved clip to the prototypes that brought it in.
    """
    out: dict[int, set[str]] = {}
    for kv in keyword_vectors:
        for proto in graph.prototypes:
            if exceeds(cosine_similarity(kv, proto.embedding), threshold):
                for node in proto.node_set:
                    out.setdefault(node, set()).add(proto.prototype_id)
    return out


def scan_oracle(keyword_vectors: Sequence[np.ndarray], graph: VideoGraph, description_vectors: dict[str, np.ndarray], threshold: float) -> set[int]:
    """Clips whose own entity descriptions match a keyword, found by scanning every clip.

    No prototypes and no edges are consulted, so a clip that mentions an
    entity only under a different description is missed.
    """
    hits: set[int] = set()
    for clip in graph.clips:
        if clip.extraction is None:
            continue
        for ent in clip.extraction.entities:
            vec = description_vectors[ent.description]
            if any(exceeds(cosine_similarity(kv, vec), threshold) for kv in keyword_vectors):
                hits.add(clip.clip_index)
                break
    return hits


def refine_oracle(rows: Sequence[tuple[int, float, Sequence[int]]], r: int) -> list[int]:
    """Clips kept by refinement, from the rule alone.

    ``rows`` holds (clip_index, re-rank score, answers). A clip with a
    positive answer is kept iff fewer than ``r`` other positive clips beat
    it on (support, score, earlier index).
    """
    def support(answers: Sequence[int]) -> int:
        return sum(min(a, 1) for a in answers)

    positive = [row for row in rows if any(a > 0 for a in row[2])]
    kept = []
    for clip, score, answers in positive:
        better = 0
        for other_clip, other_score, other_answers in positive:
            if other_clip == clip:
                continue
            s_self, s_other = support(answers), support(other_answers)
            if s_other > s_self:
                better += 1
            elif s_other == s_self:
                a, b = round(other_score, 9), round(score, 9)
                if a > b or (a == b and other_clip < clip):
                    better += 1
        if better < r:
            kept.append(clip)
    return sorted(kept)
