"""Synthetic video corpora with planted, checkable answers.

A generated video is nothing but per-clip extraction sidecars, optional
subtitles and a question file. Entities are built from the collision-free
word pools so that description variants of one entity are close under the
mock embedding and different entities are orthogonal. Each question type
plants its evidence in known clips:

* needle: one clip shows the asked-about action; several other clips show
  the same entity doing something else (hard negatives). In the alias
  variant the supporting clip describes the entity with a modifier that
  the question never mentions.
* count: the asked-about action happens in ``k`` clips.
* order: three actions happen in three clips, in a known order.
* topic: one setting dominates the video; the distractor settings never occur.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
import random
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..backends.mock import clip_verifies, count_matching_actions, mock_vector
from ..builder import parse_extraction, segment_video
from ..core.store import dumps_canonical
from ..core.types import ExtractionRecord
from .vocab import collision_free_pools

logger = logging.getLogger(__name__)

CORPUS_FORMAT = 1
QUESTION_TYPES = ("needle", "needle_alias", "count", "order", "topic")
LETTERS = "ABCD"
NEGATIVE_VERBS = 4
FILLER_VERBS = 4


class CorpusError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    seed: int = 0
    videos: int = 5
    clips_per_video: int = 24
    entities_per_video: int = 8
    aliases_per_entity: int = 2
    questions: tuple[str, ...] = QUESTION_TYPES
    hard_negatives: int = 6
    # count plantings per video; None cycles 1..5 over the videos
    count_plantings: tuple[int, ...] | None = None
    frames_per_clip: int = 64
    sample_fps: float = 1.0
    merge_threshold: float = 0.7
    retrieval_threshold: float = 0.5
    margin: float = 0.05
    subtitle_rate: float = 0.5
    # clip budget the naive-baseline oracle is computed for
    oracle_r: int = 5
    max_attempts: int = 20

    def __post_init__(self) -> None:
        unknown = [q for q in self.questions if q not in QUESTION_TYPES]
        if unknown:
            raise CorpusError(f"unknown question types {unknown}")
        if self.videos < 1 or self.clips_per_video < 1:
            raise CorpusError("need at least one video with at least one clip")
        if self.aliases_per_entity < 1:
            raise CorpusError("aliases_per_entity must be at least 1")
        if "needle_alias" in self.questions and self.aliases_per_entity < 2:
            raise CorpusError("alias needles need at least two description variants")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["questions"] = list(self.questions)
        d["count_plantings"] = None if self.count_plantings is None else list(self.count_plantings)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SyntheticCorpusSpec:
        data = dict(data)
        data["questions"] = tuple(data.get("questions", QUESTION_TYPES))
        if data.get("count_plantings") is not None:
            data["count_plantings"] = tuple(data["count_plantings"])
        return cls(**data)

    def count_for(self, video_index: int) -> int:
        if self.count_plantings is not None:
            return self.count_plantings[video_index % len(self.count_plantings)]
        return video_index % 5 + 1


@dataclass
class EntityPlan:
    noun: str
    core: tuple[str, ...]
    modifiers: tuple[str, ...]

    def variant(self, j: int) -> str:
        return " ".join((self.modifiers[j],) + self.core + (self.noun,))

    def mention(self) -> str:
        return f"{self.modifiers[0]} {self.noun}"


@dataclass
class Occurrence:
    entity: int
    variant: int
    verb: str


@dataclass
class PlantedQuestion:
    question_id: str
    type: str
    question: str
    options: dict[str, str]
    answer: str
    supporting_clips: list[int]
    hard_negatives: list[int]
    alias_only: bool = False
    count: int | None = None
    naive_recall_at_r: float | None = None

    def ground_truth(self) -> dict[str, Any]:
        return {
            "type": self.type,
            "answer": self.answer,
            "answer_text": self.options[self.answer],
            "supporting_clips": self.supporting_clips,
            "hard_negatives": self.hard_negatives,
            "alias_only": self.alias_only,
            "count": self.count,
            "naive_recall_at_r": self.naive_recall_at_r,
        }


@dataclass
class VideoPlan:
    video_id: str
    frame_count: int
    entities: list[EntityPlan]
    occurrences: list[list[Occurrence]]
    scenes: list[str]
    subtitles: list[str]
    questions: list[PlantedQuestion] = field(default_factory=list)

    def record(self, clip_index: int) -> ExtractionRecord:
        return parse_extraction(json.dumps(self.sidecar(clip_index)))

    def sidecar(self, clip_index: int) -> dict[str, Any]:
        """Clip description in the shape the extraction prompt asks for."""
        occ = sorted(self.occurrences[clip_index], key=lambda o: o.entity)
        return {
            "entities": [
                {"entity name": self.entities[o.entity].noun, "description": self.entities[o.entity].variant(o.variant)}
                for o in occ
            ],
            "actions": [{self.entities[o.entity].noun: f"{o.verb} the {self.entities[o.entity].noun}"} for o in occ],
            "scenes": [{"location": self.scenes[clip_index]}],
        }

    def plain_text(self, clip_index: int) -> str:
        """Same words the engine's plain-text clip document holds, built from the plan."""
        words: list[str] = []
        for o in self.occurrences[clip_index]:
            ent = self.entities[o.entity]
            words += [ent.noun, ent.variant(o.variant), ent.noun, f"{o.verb} the {ent.noun}"]
        words.append(self.scenes[clip_index])
        words.append(self.subtitles[clip_index])
        return " ".join(w for w in words if w)


# ---------------------------------------------------------------------------
# oracles


def mock_cosine(a: str, b: str) -> float:
    return float(np.dot(mock_vector(a), mock_vector(b)))


def naive_topk_oracle(texts: list[str], question: str, k: int) -> list[int]:
    """Brute-force plain-text retrieval: score every clip against the raw question, keep the best k."""
    q = mock_vector(question)
    scored = []
    for idx, text in enumerate(texts):
        score = float(np.dot(q, mock_vector(text))) if text.strip() else 0.0
        scored.append((-round(score, 9), idx))
    scored.sort()
    return [idx for _, idx in scored[:k]]


def uniform_indices(clip_count: int, r: int) -> list[int]:
    stride = math.ceil(clip_count / r)
    return list(range(0, clip_count, stride))[:r]


# ---------------------------------------------------------------------------
# generation


def _entity_questions(questions: tuple[str, ...]) -> list[str]:
    return [q for q in questions if q != "topic"]


def _questions_for(spec: SyntheticCorpusSpec) -> list[str]:
    """Question types to plant; each entity question needs an entity of its own."""
    out, used = [], 0
    for qtype in spec.questions:
        if qtype != "topic":
            if used == spec.entities_per_video:
                continue
            used += 1
        out.append(qtype)
    if len(out) < len(spec.questions):
        dropped = _entity_questions(spec.questions)[spec.entities_per_video:]
        logger.warning("only %d entities per video; not planting %s", spec.entities_per_video, dropped)
    return out


def _plan_video(spec: SyntheticCorpusSpec, video_index: int, rng: random.Random) -> VideoPlan:
    pools = collision_free_pools()
    C, E, A = spec.clips_per_video, spec.entities_per_video, spec.aliases_per_entity
    questions_wanted = _questions_for(spec)
    if E > len(pools["nouns"]) or E * (3 + A) > len(pools["adjectives"]):
        raise CorpusError(f"word pools cannot hold {E} entities with {A} variants each")

    nouns = rng.sample(pools["nouns"], E)
    adjectives = rng.sample(pools["adjectives"], E * (3 + A))
    entities = [
        EntityPlan(nouns[e], tuple(adjectives[e * (3 + A) : e * (3 + A) + 3]), tuple(adjectives[e * (3 + A) + 3 : (e + 1) * (3 + A)]))
        for e in range(E)
    ]

    verbs = list(pools["verbs"])
    rng.shuffle(verbs)

    def take(n: int) -> list[str]:
        if n > len(verbs):
            raise CorpusError("verb pool exhausted")
        out = verbs[:n]
        del verbs[:n]
        return out

    negative_verbs = take(NEGATIVE_VERBS)
    filler_verbs = take(FILLER_VERBS)

    scene_words = list(pools["scene_words"])
    rng.shuffle(scene_words)
    scene_names = [f"{scene_words[2 * i]} {scene_words[2 * i + 1]}" for i in range(6)]
    dominant, secondary, distractor_scenes = scene_names[0], scene_names[1:3], scene_names[3:6]

    occurrences: list[list[Occurrence]] = [[] for _ in range(C)]
    questions: list[PlantedQuestion] = []
    video_id = f"vid{video_index:03d}"
    used_entities: set[int] = set()

    for q_num, qtype in enumerate(questions_wanted):
        qid = f"{video_id}_q{q_num}"
        if qtype == "topic":
            continue
        e = len(used_entities)
        used_entities.add(e)
        ent = entities[e]
        alias = qtype == "needle_alias"
        if qtype in ("needle", "needle_alias"):
            n_support = 1
        elif qtype == "count":
            n_support = spec.count_for(video_index)
        else:
            n_support = 3
        n_neg = min(spec.hard_negatives, C - n_support)
        if alias and n_neg < 1:
            raise CorpusError("alias needles need a hard negative before the supporting clip")
        if n_support > C:
            raise CorpusError(f"{qtype} question needs {n_support} clips, video has {C}")
        chosen = sorted(rng.sample(range(C), n_support + n_neg))
        if alias:
            support = sorted(rng.sample(chosen[1:], n_support))
        else:
            support = sorted(rng.sample(chosen, n_support))
        negatives = [c for c in chosen if c not in support]
        for c in negatives:
            occurrences[c].append(Occurrence(e, 0, rng.choice(negative_verbs)))

        if qtype in ("needle", "needle_alias"):
            option_verbs = take(4)
            correct_verb = option_verbs[0]
            occurrences[support[0]].append(Occurrence(e, 1 if alias else 0, correct_verb))
            texts = [f"{v} the {ent.noun}" for v in option_verbs]
            order = list(range(4))
            rng.shuffle(order)
            options = {LETTERS[i]: texts[j] for i, j in enumerate(order)}
            answer = LETTERS[order.index(0)]
            question = f"What did I do with the {ent.mention()}?"
            questions.append(PlantedQuestion(qid, "needle", question, options, answer, support, negatives, alias_only=alias))
        elif qtype == "count":
            (verb,) = take(1)
            for c in support:
                occurrences[c].append(Occurrence(e, 0, verb))
            k = n_support
            values = [k] + rng.sample([v for v in range(1, 9) if v != k], 3)
            values.sort()
            options = {LETTERS[i]: str(v) for i, v in enumerate(values)}
            answer = LETTERS[values.index(k)]
            question = f"How many times did I {verb} the {ent.mention()}?"
            questions.append(PlantedQuestion(qid, "count", question, options, answer, support, negatives, count=k))
        else:  # order
            events = take(3)
            for c, verb in zip(support, events):
                occurrences[c].append(Occurrence(e, 0, verb))
            phrases = [f"{v} the {ent.noun}" for v in events]
            perms = list(itertools.permutations(range(3)))
            wrong = rng.sample(perms[1:], 3)
            picks = [perms[0]] + wrong
            order = list(range(4))
            rng.shuffle(order)
            options = {LETTERS[i]: ", then ".join(phrases[p] for p in picks[j]) for i, j in enumerate(order)}
            answer = LETTERS[order.index(0)]
            question = f"In what order did I do these things with the {ent.mention()}?"
            questions.append(PlantedQuestion(qid, "order", question, options, answer, support, negatives))

    fillers = [e for e in range(E) if e not in used_entities]
    for e in fillers:
        for c in rng.sample(range(C), min(C, rng.randint(2, 4))):
            occurrences[c].append(Occurrence(e, rng.randrange(A), rng.choice(filler_verbs)))
    if fillers:
        for c in range(C):
            if not occurrences[c]:
                occurrences[c].append(Occurrence(rng.choice(fillers), rng.randrange(A), rng.choice(filler_verbs)))
    # one occurrence per entity per clip: keep the first planted one
    for c in range(C):
        seen: set[int] = set()
        occurrences[c] = [o for o in occurrences[c] if not (o.entity in seen or seen.add(o.entity))]

    forced = {i for r in range(1, 6) for i in uniform_indices(C, r)}
    scenes = []
    for c in range(C):
        if c in forced or rng.random() < 0.7:
            scenes.append(dominant)
        else:
            scenes.append(rng.choice(secondary))

    chatter = pools["chatter"]
    subtitles = [
        " ".join(rng.sample(chatter, rng.randint(2, 3))) if rng.random() < spec.subtitle_rate else "" for _ in range(C)
    ]

    for q_num, qtype in enumerate(questions_wanted):
        if qtype != "topic":
            continue
        texts = [dominant] + distractor_scenes
        order = list(range(4))
        rng.shuffle(order)
        options = {LETTERS[i]: texts[j] for i, j in enumerate(order)}
        support = [c for c in range(C) if scenes[c] == dominant]
        questions.append(
            PlantedQuestion(
                f"{video_id}_q{q_num}", "topic", "What is the main setting of the whole video?",
                options, LETTERS[order.index(0)], support, [],
            )
        )
    questions.sort(key=lambda q: int(q.question_id.rsplit("q", 1)[1]))

    frame_count = C * spec.frames_per_clip - rng.randint(0, spec.frames_per_clip // 2)
    if len(segment_video(frame_count, spec.frames_per_clip)) != C:
        raise CorpusError("frame count does not segment into the planned clip count")
    return VideoPlan(video_id, frame_count, entities, occurrences, scenes, subtitles, questions)


def _check_video(spec: SyntheticCorpusSpec, plan: VideoPlan) -> list[str]:
    """Problems that would make the planted answers unreliable under the mock models."""
    problems: list[str] = []
    hi, lo = spec.merge_threshold + spec.margin, spec.merge_threshold - spec.margin
    for i, ent in enumerate(plan.entities):
        variants = [ent.variant(j) for j in range(spec.aliases_per_entity)]
        for a, b in itertools.combinations(variants, 2):
            if mock_cosine(a, b) < hi - 1e-9:
                problems.append(f"entity {ent.noun}: variants too far apart")
        for other in plan.entities[i + 1 :]:
            for a in variants:
                for j in range(spec.aliases_per_entity):
                    if mock_cosine(a, other.variant(j)) >= lo:
                        problems.append(f"entities {ent.noun}/{other.noun} too close")
    records = [plan.record(c) for c in range(len(plan.occurrences))]
    C = len(records)
    for q in plan.questions:
        if q.type == "needle":
            for letter, text in q.options.items():
                hits = [c for c in range(C) if clip_verifies(f"Does the video show {text}?", records[c])]
                want = q.supporting_clips if letter == q.answer else []
                if hits != want:
                    problems.append(f"{q.question_id}: option {letter} verified by {hits}, expected {want}")
            ent_kw = q.question.split("the ", 1)[1].rstrip("?")
            canon = [p for p in plan.entities if p.mention() == ent_kw]
            if len(canon) != 1 or mock_cosine(ent_kw, canon[0].variant(0)) <= spec.retrieval_threshold:
                problems.append(f"{q.question_id}: keyword does not reach its entity")
        elif q.type == "count":
            counts = [count_matching_actions(q.question, rec) for rec in records]
            if [c for c in range(C) if counts[c]] != q.supporting_clips or sum(counts) != q.count:
                problems.append(f"{q.question_id}: planted count not recoverable")
        elif q.type == "order":
            parts = q.options[q.answer].split(", then ")
            for part, clip in zip(parts, q.supporting_clips):
                hits = [c for c in range(C) if clip_verifies(f"Does the video show {part}?", records[c])]
                if hits != [clip]:
                    problems.append(f"{q.question_id}: event {part!r} seen in {hits}")
        elif q.type == "topic":
            for letter, text in q.options.items():
                hits = [c for c in range(C) if clip_verifies(f"Does the video show {text}?", records[c])]
                if letter == q.answer and not set(uniform_indices(C, spec.oracle_r)) & set(hits):
                    problems.append(f"{q.question_id}: dominant setting missing from uniform clips")
                if letter != q.answer and hits:
                    problems.append(f"{q.question_id}: distractor setting {text!r} present")
    return problems


@dataclass
class Corpus:
    spec: SyntheticCorpusSpec
    videos: list[VideoPlan]

    def needle_questions(self) -> list[PlantedQuestion]:
        return [q for v in self.videos for q in v.questions if q.type == "needle"]

    def oracle(self) -> dict[str, Any]:
        needles = self.needle_questions()
        naive = sum(q.naive_recall_at_r for q in needles) / len(needles) if needles else None
        graph = 1.0 if needles else None
        return {
            "r": self.spec.oracle_r,
            "needle_questions": len(needles),
            "naive_needle_recall": naive,
            "graph_needle_recall": graph,
            "expected_margin": None if naive is None else graph - naive,
        }


def generate_corpus(spec: SyntheticCorpusSpec) -> Corpus:
    """Plan every video, retrying a video until all of its planted answers check out."""
    videos = []
    for vi in range(spec.videos):
        for attempt in range(spec.max_attempts):
            rng = random.Random(f"{spec.seed}:{vi}:{attempt}")
            plan = _plan_video(spec, vi, rng)
            problems = _check_video(spec, plan)
            if not problems:
                break
        else:
            raise CorpusError(f"video {vi}: no valid plan after {spec.max_attempts} attempts: {problems[:3]}")
        texts = [plan.plain_text(c) for c in range(spec.clips_per_video)]
        for q in plan.questions:
            if q.type == "needle":
                top = set(naive_topk_oracle(texts, q.question, spec.oracle_r))
                q.naive_recall_at_r = len(top & set(q.supporting_clips)) / len(q.supporting_clips)
        videos.append(plan)
    return Corpus(spec, videos)


def write_corpus(corpus: Corpus, out_dir: str | Path, overwrite: bool = False) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise CorpusError(f"{out} is not empty")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    spec = corpus.spec
    for plan in corpus.videos:
        vdir = out / plan.video_id
        (vdir / "sidecars").mkdir(parents=True)
        (vdir / "subtitles").mkdir()
        meta = {
            "video_id": plan.video_id,
            "frame_count": plan.frame_count,
            "frames_per_clip": spec.frames_per_clip,
            "sample_fps": spec.sample_fps,
        }
        (vdir / "meta.json").write_text(dumps_canonical(meta), encoding="utf-8")
        for c in range(len(plan.occurrences)):
            (vdir / "sidecars" / f"clip_{c:04d}.json").write_text(
                json.dumps(plan.sidecar(c), indent=2) + "\n", encoding="utf-8"
            )
            if plan.subtitles[c]:
                (vdir / "subtitles" / f"clip_{c:04d}.txt").write_text(plan.subtitles[c] + "\n", encoding="utf-8")
        questions = [
            {"question_id": q.question_id, "question": q.question, "options": q.options, "type": q.type}
            for q in plan.questions
        ]
        (vdir / "questions.json").write_text(dumps_canonical(questions), encoding="utf-8")
        truth = {q.question_id: q.ground_truth() for q in plan.questions}
        (vdir / "ground_truth.json").write_text(dumps_canonical(truth), encoding="utf-8")
    index = {
        "format": CORPUS_FORMAT,
        "spec": spec.to_dict(),
        "videos": [p.video_id for p in corpus.videos],
        "oracle": corpus.oracle(),
    }
    (out / "corpus.json").write_text(dumps_canonical(index), encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# reading a corpus back


@dataclass
class VideoFixture:
    video_id: str
    directory: Path
    frame_count: int
    frames_per_clip: int
    sample_fps: float
    questions: list[dict[str, Any]]
    ground_truth: dict[str, dict[str, Any]]

    @property
    def clip_count(self) -> int:
        return math.ceil(self.frame_count / self.frames_per_clip)

    def subtitles(self) -> list[str]:
        out = [""] * self.clip_count
        sub_dir = self.directory / "subtitles"
        if sub_dir.is_dir():
            for path in sorted(sub_dir.glob("clip_*.txt")):
                idx = int(path.stem.split("_")[1])
                if idx < self.clip_count:
                    out[idx] = path.read_text(encoding="utf-8").strip()
        return out


@dataclass
class CorpusIndex:
    root: Path
    spec: dict[str, Any]
    oracle: dict[str, Any]
    videos: list[VideoFixture]


def load_video_fixture(vdir: str | Path) -> VideoFixture:
    vdir = Path(vdir)
    meta = json.loads((vdir / "meta.json").read_text(encoding="utf-8"))
    qpath, gpath = vdir / "questions.json", vdir / "ground_truth.json"
    return VideoFixture(
        video_id=meta["video_id"],
        directory=vdir,
        frame_count=int(meta["frame_count"]),
        frames_per_clip=int(meta.get("frames_per_clip", 64)),
        sample_fps=float(meta.get("sample_fps", 1.0)),
        questions=json.loads(qpath.read_text(encoding="utf-8")) if qpath.exists() else [],
        ground_truth=json.loads(gpath.read_text(encoding="utf-8")) if gpath.exists() else {},
    )


def load_corpus(root: str | Path) -> CorpusIndex:
    root = Path(root)
    index_path = root / "corpus.json"
    if not index_path.exists():
        raise CorpusError(f"{root} has no corpus.json")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    if index.get("format") != CORPUS_FORMAT:
        raise CorpusError(f"unsupported corpus format {index.get('format')!r}")
    videos = [load_video_fixture(root / vid) for vid in index["videos"]]
    return CorpusIndex(root, index["spec"], index["oracle"], videos)
