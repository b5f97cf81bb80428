"""Domain types shared by every stage of the engine."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

REFINEMENT_STRATEGIES = ("structured", "confidence", "none")
MERGE_TEXT_MODES = ("description", "name_and_description")


class ConfigError(ValueError):
    """Raised when an engine or CLI configuration is invalid."""


@dataclass(frozen=True)
class EngineConfig:
    """Tunable constants for graph construction and query answering.

    Defaults: 64-frame clips sampled at 1 fps, merge threshold 0.7,
    retrieval threshold 0.5, top-20 retrieval and at most 5 clips kept
    after refinement.
    """

    frames_per_clip: int = 64
    sample_fps: float = 1.0
    merge_threshold: float = 0.7
    retrieval_threshold: float = 0.5
    retrieval_top_n: int = 20
    refine_max_r: int = 5
    refinement_strategy: str = "structured"
    # what text is embedded for entity merging
    merge_text: str = "description"
    # scenes/actions also merged as pseudo-entities (sweep only)
    merge_scenes_actions: bool = False
    # actions and scene locations count as node info during re-ranking
    rerank_actions_scenes: bool = True
    # subtitles of refined clips are repeated in the final prompt
    prompt_subtitles: bool = True
    max_workers: int = 4

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.frames_per_clip, int) or self.frames_per_clip < 1:
            raise ConfigError(f"frames_per_clip must be a positive integer, got {self.frames_per_clip!r}")
        if not self.sample_fps > 0:
            raise ConfigError(f"sample_fps must be positive, got {self.sample_fps!r}")
        for name in ("merge_threshold", "retrieval_threshold"):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1], got {value!r}")
        if not isinstance(self.retrieval_top_n, int) or self.retrieval_top_n < 1:
            raise ConfigError(f"retrieval_top_n must be a positive integer, got {self.retrieval_top_n!r}")
        if not isinstance(self.refine_max_r, int) or self.refine_max_r < 1:
            raise ConfigError(f"refine_max_r must be a positive integer, got {self.refine_max_r!r}")
        if self.refine_max_r > self.retrieval_top_n:
            raise ConfigError(
                f"refine_max_r ({self.refine_max_r}) must not exceed retrieval_top_n ({self.retrieval_top_n})"
            )
        if self.refinement_strategy not in REFINEMENT_STRATEGIES:
            raise ConfigError(
                f"refinement_strategy must be one of {REFINEMENT_STRATEGIES}, got {self.refinement_strategy!r}"
            )
        if self.merge_text not in MERGE_TEXT_MODES:
            raise ConfigError(f"merge_text must be one of {MERGE_TEXT_MODES}, got {self.merge_text!r}")
        if not isinstance(self.max_workers, int) or self.max_workers < 1:
            raise ConfigError(f"max_workers must be a positive integer, got {self.max_workers!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EngineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown engine config field(s): {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, **changes: Any) -> EngineConfig:
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class Entity:
    name: str
    description: str


@dataclass(frozen=True)
class Action:
    entity_name: str
    description: str


@dataclass(frozen=True)
class ExtractionRecord:
    """Entities, actions and scenes the model reported for one clip."""

    entities: tuple[Entity, ...] = ()
    actions: tuple[Action, ...] = ()
    scenes: tuple[str, ...] = ()

    def orphan_actions(self) -> list[Action]:
        names = {e.name for e in self.entities}
        return [a for a in self.actions if a.entity_name not in names]

    def text_fragments(self, include_actions_scenes: bool = True) -> list[str]:
        """Searchable strings of the node, in a fixed order."""
        out: list[str] = []
        for ent in self.entities:
            out.append(ent.name)
            out.append(ent.description)
        if include_actions_scenes:
            out.extend(a.description for a in self.actions)
            out.extend(self.scenes)
        return [s for s in out if s.strip()]

    def flat_text(self) -> str:
        parts: list[str] = []
        for ent in self.entities:
            parts.append(f"{ent.name} {ent.description}")
        for act in self.actions:
            parts.append(f"{act.entity_name} {act.description}")
        parts.extend(self.scenes)
        return " ".join(parts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entities": [{"name": e.name, "description": e.description} for e in self.entities],
            "actions": [{"entity_name": a.entity_name, "description": a.description} for a in self.actions],
            "scenes": [{"location": s} for s in self.scenes],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExtractionRecord:
        return cls(
            entities=tuple(Entity(e["name"], e["description"]) for e in data["entities"]),
            actions=tuple(Action(a["entity_name"], a["description"]) for a in data["actions"]),
            scenes=tuple(s["location"] for s in data["scenes"]),
        )


@dataclass
class ClipRecord:
    clip_index: int
    frame_start: int
    frame_end: int
    subtitle_text: str = ""
    extraction: ExtractionRecord | None = None

    def __post_init__(self) -> None:
        if self.clip_index < 0:
            raise ValueError(f"clip_index must be non-negative, got {self.clip_index}")
        if not self.frame_start < self.frame_end:
            raise ValueError(f"clip {self.clip_index}: frame_start must be < frame_end")

    @property
    def frame_count(self) -> int:
        return self.frame_end - self.frame_start

    def info_strings(self, include_actions_scenes: bool = True) -> list[str]:
        out = self.extraction.text_fragments(include_actions_scenes) if self.extraction else []
        if self.subtitle_text.strip():
            out.append(self.subtitle_text)
        return out

    def plain_text(self) -> str:
        """Clip rendered as one document: extraction text followed by subtitles."""
        parts = [self.extraction.flat_text()] if self.extraction else []
        if self.subtitle_text.strip():
            parts.append(self.subtitle_text)
        return " ".join(parts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_index": self.clip_index,
            "frame_start": self.frame_start,
            "frame_end": self.frame_end,
            "subtitle_text": self.subtitle_text,
            "extraction": self.extraction.to_dict() if self.extraction is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ClipRecord:
        ext = data["extraction"]
        return cls(
            clip_index=data["clip_index"],
            frame_start=data["frame_start"],
            frame_end=data["frame_end"],
            subtitle_text=data["subtitle_text"],
            extraction=ExtractionRecord.from_dict(ext) if ext is not None else None,
        )


@dataclass(frozen=True)
class MemberForm:
    clip_index: int
    name: str
    description: str


@dataclass
class PrototypeEntity:
    """A merged entity shared by one or more clips.

    ``canonical_description`` is the description of the first member and
    never changes afterwards; ``embedding`` caches its vector.
    """

    prototype_id: str
    canonical_description: str
    member_forms: list[MemberForm] = field(default_factory=list)
    node_set: list[int] = field(default_factory=list)
    embedding: np.ndarray | None = None

    def add_member(self, clip_index: int, name: str, description: str) -> None:
        self.member_forms.append(MemberForm(clip_index, name, description))
        if clip_index not in self.node_set:
            self.node_set.append(clip_index)

    @property
    def canonical_name(self) -> str:
        return self.member_forms[0].name if self.member_forms else ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "prototype_id": self.prototype_id,
            "canonical_description": self.canonical_description,
            "member_forms": [[m.clip_index, m.name, m.description] for m in self.member_forms],
            "node_set": list(self.node_set),
            "embedding": None if self.embedding is None else [float(x) for x in self.embedding],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PrototypeEntity:
        emb = data["embedding"]
        return cls(
            prototype_id=data["prototype_id"],
            canonical_description=data["canonical_description"],
            member_forms=[MemberForm(int(c), n, d) for c, n, d in data["member_forms"]],
            node_set=[int(i) for i in data["node_set"]],
            embedding=None if emb is None else np.asarray(emb, dtype=np.float64),
        )


@dataclass
class VideoGraph:
    video_id: str
    config: EngineConfig
    clips: list[ClipRecord] = field(default_factory=list)
    prototypes: list[PrototypeEntity] = field(default_factory=list)
    adjacency: set[tuple[int, int]] = field(default_factory=set)

    @property
    def clip_count(self) -> int:
        return len(self.clips)

    def clip(self, clip_index: int) -> ClipRecord:
        clip = self.clips[clip_index]
        if clip.clip_index != clip_index:
            # clips are contiguous from 0, so this only trips on hand-built graphs
            clip = next(c for c in self.clips if c.clip_index == clip_index)
        return clip

    def prototype(self, prototype_id: str) -> PrototypeEntity:
        for proto in self.prototypes:
            if proto.prototype_id == prototype_id:
                return proto
        raise KeyError(prototype_id)

    def prototypes_of(self, clip_index: int) -> list[PrototypeEntity]:
        return [p for p in self.prototypes if clip_index in p.node_set]

    def degree(self, clip_index: int) -> int:
        return sum(1 for a, b in self.adjacency if clip_index in (a, b))

    def skipped_clips(self) -> list[int]:
        return [c.clip_index for c in self.clips if c.extraction is None]


def entity_merge_text(name: str, description: str, mode: str = "description") -> str:
    """Text whose embedding decides entity identity during merging."""
    if mode == "name_and_description":
        return f"{name}: {description}"
    return description
