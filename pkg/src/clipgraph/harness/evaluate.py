"""Benchmark-style evaluation over a synthetic corpus.

Four modes reproduce the ablation ladder: graph retrieval with structured
reasoning (``vgent``), graph retrieval alone (``graph_no_sr``), plain-text
retrieval alone (``naive_rag``) and plain-text retrieval followed by
structured reasoning (``naive_plus_sr``).
"""
from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ..backends import Backends, SidecarStore, mock_backends
from ..builder import build_graph
from ..core.store import dumps_canonical, load_graph, save_graph
from ..core.types import EngineConfig, VideoGraph
from ..generation import AnswerTrace, answer_question
from .corpus import CorpusIndex, VideoFixture, load_corpus

logger = logging.getLogger(__name__)

MODES: dict[str, tuple[str, str | None]] = {
    "vgent": ("graph", None),
    "graph_no_sr": ("graph", "none"),
    "naive_rag": ("naive", "none"),
    "naive_plus_sr": ("naive", "structured"),
}
# config fields that change what build_graph produces
BUILD_FIELDS = ("frames_per_clip", "sample_fps", "merge_threshold", "merge_text", "merge_scenes_actions")
SWEEP_PARAMETERS = {
    "N": "retrieval_top_n",
    "retrieval_top_n": "retrieval_top_n",
    "r": "refine_max_r",
    "refine_max_r": "refine_max_r",
    "theta": "retrieval_threshold",
    "retrieval_threshold": "retrieval_threshold",
}


class SweepCheckError(AssertionError):
    pass


class AmortizationError(AssertionError):
    pass


# ---------------------------------------------------------------------------
# call accounting


def _marks(backends: Backends) -> tuple[int, int | None]:
    chat = backends.chat.trace.snapshot()
    embed = None if backends.embed.trace is backends.chat.trace else backends.embed.trace.snapshot()
    return chat, embed


def _calls_since(backends: Backends, marks: tuple[int, int | None]) -> dict[str, int]:
    records = backends.chat.trace.since(marks[0])
    if marks[1] is not None:
        records += backends.embed.trace.since(marks[1])
    return dict(sorted(Counter(f"{c.capability}:{c.task}" for c in records).items()))


# ---------------------------------------------------------------------------
# graphs


def _build_compatible(graph: VideoGraph, config: EngineConfig) -> bool:
    return all(getattr(graph.config, f) == getattr(config, f) for f in BUILD_FIELDS)


def build_or_load(
    video: VideoFixture,
    backends: Backends,
    config: EngineConfig,
    graph_path: Path | None = None,
    lenient: bool = False,
) -> tuple[VideoGraph, bool]:
    """Graph for one video, reused from ``graph_path`` when it was built with the same settings.

    Returns the graph and whether it was freshly built.
    """
    if graph_path is not None and graph_path.exists():
        graph = load_graph(graph_path)
        if _build_compatible(graph, config):
            return graph, False
        logger.info("%s was built with different settings; rebuilding", graph_path)
    config = config.with_overrides(frames_per_clip=video.frames_per_clip, sample_fps=video.sample_fps)
    graph = build_graph(video.video_id, video.frame_count, video.subtitles(), backends, config, lenient=lenient)
    if graph_path is not None:
        save_graph(graph, graph_path)
    return graph, True


# ---------------------------------------------------------------------------
# reports


@dataclass
class QuestionResult:
    question_id: str
    video_id: str
    type: str
    alias_only: bool
    answer: str
    parsed: str | None
    correct: bool
    recall: float | None
    final_clips: list[int]
    supporting_in_final: int
    negatives_in_final: int
    candidate_count: int | None
    fallback_used: bool
    error: str | None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass
class EvalReport:
    mode: str
    config: dict[str, Any]
    results: list[QuestionResult]
    call_counts: dict[str, dict[str, int]]
    timings: dict[str, float] = field(default_factory=dict)
    traces: list[AnswerTrace] = field(default_factory=list, repr=False)

    def _by_type(self) -> dict[str, list[QuestionResult]]:
        groups: dict[str, list[QuestionResult]] = {}
        for res in self.results:
            groups.setdefault(res.type, []).append(res)
        return dict(sorted(groups.items()))

    @property
    def accuracy(self) -> float | None:
        return _mean([float(r.correct) for r in self.results])

    @property
    def per_type_accuracy(self) -> dict[str, float]:
        return {t: _mean([float(r.correct) for r in rs]) for t, rs in self._by_type().items()}

    @property
    def recall_at_r(self) -> dict[str, float]:
        out = {}
        for t, rs in self._by_type().items():
            values = [r.recall for r in rs if r.recall is not None]
            if values:
                out[t] = _mean(values)
        return out

    def needle_recall(self, alias_only: bool | None = None) -> float | None:
        return _mean(
            [
                r.recall
                for r in self.results
                if r.type == "needle" and r.recall is not None and (alias_only is None or r.alias_only == alias_only)
            ]
        )

    @property
    def refinement_precision(self) -> float | None:
        values = [
            r.supporting_in_final / len(r.final_clips)
            for r in self.results
            if r.type != "topic" and r.final_clips
        ]
        return _mean(values)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "config": dict(self.config),
            "questions": len(self.results),
            "accuracy": self.accuracy,
            "per_type_accuracy": self.per_type_accuracy,
            "recall_at_r": self.recall_at_r,
            "needle_recall": self.needle_recall(),
            "needle_alias_recall": self.needle_recall(alias_only=True),
            "refinement_precision": self.refinement_precision,
            "failures": sorted(r.question_id for r in self.results if r.error),
            "call_counts": {k: dict(v) for k, v in self.call_counts.items()},
            "results": [r.to_dict() for r in self.results],
        }

    def render_text(self) -> str:
        def fmt(x: float | None) -> str:
            return "-" if x is None else f"{x:.3f}"

        r = self.config.get("refine_max_r")
        lines = [f"mode: {self.mode}", f"questions: {len(self.results)}", f"accuracy: {fmt(self.accuracy)}", ""]
        lines.append(f"{'type':<10} {'n':>3} {'accuracy':>9} {'recall@' + str(r):>9}")
        recalls = self.recall_at_r
        for t, rs in self._by_type().items():
            lines.append(f"{t:<10} {len(rs):>3} {fmt(self.per_type_accuracy[t]):>9} {fmt(recalls.get(t)):>9}")
        lines.append("")
        lines.append(f"refinement precision: {fmt(self.refinement_precision)}")
        for phase, counts in self.call_counts.items():
            lines.append(f"{phase} calls: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
        return "\n".join(lines) + "\n"


def score_trace(trace: AnswerTrace, truth: dict[str, Any]) -> QuestionResult:
    support = set(truth.get("supporting_clips") or [])
    negatives = set(truth.get("hard_negatives") or [])
    final = list(trace.media_clips)
    recall = None
    if support and truth["type"] != "topic":
        recall = len(support & set(final)) / len(support)
    return QuestionResult(
        question_id=trace.question_id,
        video_id=trace.video_id,
        type=truth["type"],
        alias_only=bool(truth.get("alias_only")),
        answer=truth["answer"],
        parsed=trace.parsed_option,
        correct=trace.ok and trace.parsed_option == truth["answer"],
        recall=recall,
        final_clips=final,
        supporting_in_final=len(support & set(final)),
        negatives_in_final=len(negatives & set(final)),
        candidate_count=trace.candidate_count,
        fallback_used=trace.fallback_used,
        error=None if trace.error is None else f"{trace.error['stage']}: {trace.error['message']}",
    )


# ---------------------------------------------------------------------------
# running


def default_backends(corpus: CorpusIndex) -> Backends:
    return mock_backends(SidecarStore.from_dirs(v.directory for v in corpus.videos))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def run_eval(
    corpus: str | Path | CorpusIndex,
    mode: str = "vgent",
    config: EngineConfig | None = None,
    backends: Backends | None = None,
    out_dir: str | Path | None = None,
    graphs: dict[str, VideoGraph] | None = None,
    graph_dir: str | Path | None = None,
    max_workers: int | None = None,
) -> EvalReport:
    """Answer every corpus question in ``mode`` and score it against the ground truth.

    Graphs come from ``graphs`` (an in-memory cache shared across calls),
    then ``graph_dir`` (or ``out_dir/graphs``), and are built otherwise.
    With ``out_dir`` every trace, the graphs and the report are written
    there; wall-clock timings go to a separate file so the rest is
    reproducible byte for byte.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {sorted(MODES)}")
    corpus = corpus if isinstance(corpus, CorpusIndex) else load_corpus(corpus)
    config = config or EngineConfig()
    backends = backends or default_backends(corpus)
    retrieval, strategy = MODES[mode]
    out = Path(out_dir) if out_dir is not None else None
    gdir = Path(graph_dir) if graph_dir is not None else (out / "graphs" if out is not None else None)
    graphs = graphs if graphs is not None else {}
    timings: dict[str, float] = {}

    start = time.perf_counter()
    marks = _marks(backends)
    for video in corpus.videos:
        cached = graphs.get(video.video_id)
        if cached is None or not _build_compatible(cached, config):
            path = gdir / f"{video.video_id}.json" if gdir is not None else None
            graphs[video.video_id], _ = build_or_load(video, backends, config, path)
        elif gdir is not None and not (gdir / f"{video.video_id}.json").exists():
            save_graph(cached, gdir / f"{video.video_id}.json")
    build_calls = _calls_since(backends, marks)
    timings["build"] = time.perf_counter() - start

    jobs = [(video, q) for video in corpus.videos for q in video.questions]
    workers = max_workers or config.max_workers

    def run(job: tuple[VideoFixture, dict[str, Any]]) -> AnswerTrace:
        video, q = job
        return answer_question(
            q["question"], q.get("options") or {}, graphs[video.video_id], backends, config,
            question_id=q["question_id"], retrieval=retrieval, strategy=strategy,
        )

    start = time.perf_counter()
    marks = _marks(backends)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        traces = list(pool.map(run, jobs))
    query_calls = _calls_since(backends, marks)
    timings["questions"] = time.perf_counter() - start
    traces.sort(key=lambda t: t.question_id)

    truth = {qid: gt for v in corpus.videos for qid, gt in v.ground_truth.items()}
    results = [score_trace(t, truth[t.question_id]) for t in traces]
    for t in traces:
        for stage, secs in t.timings.items():
            timings[f"stage:{stage}"] = timings.get(f"stage:{stage}", 0.0) + secs
    report = EvalReport(mode, config.to_dict(), results, {"build": build_calls, "query": query_calls}, timings, traces)

    if out is not None:
        for t in traces:
            _write(out / "traces" / f"{t.question_id}.json", dumps_canonical(t.to_dict()))
        _write(out / "report.json", dumps_canonical(report.to_dict()))
        _write(out / "report.txt", report.render_text())
        _write(out / "timings.json", dumps_canonical({k: round(v, 6) for k, v in sorted(timings.items())}))
    return report


def sweep(
    corpus: str | Path | CorpusIndex,
    parameter: str,
    values: Sequence[float],
    mode: str = "vgent",
    config: EngineConfig | None = None,
    backends: Backends | None = None,
    out_dir: str | Path | None = None,
) -> list[tuple[float, EvalReport]]:
    """One report per value of N, r or the retrieval threshold; graphs are built once."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEP_PARAMETERS)}")
    if list(values) != sorted(values):
        raise ValueError("sweep values must be sorted")
    field_name = SWEEP_PARAMETERS[parameter]
    corpus = corpus if isinstance(corpus, CorpusIndex) else load_corpus(corpus)
    config = config or EngineConfig()
    backends = backends or default_backends(corpus)
    graphs: dict[str, VideoGraph] = {}
    out = Path(out_dir) if out_dir is not None else None
    reports = []
    for value in values:
        cfg = config.with_overrides(**{field_name: value})
        if field_name == "refine_max_r" and cfg.retrieval_top_n < value:
            cfg = cfg.with_overrides(retrieval_top_n=int(value))
        sub = out / f"{field_name}={value}" if out is not None else None
        gdir = out / "graphs" if out is not None else None
        reports.append((value, run_eval(corpus, mode, cfg, backends, sub, graphs, gdir)))

    if field_name == "retrieval_threshold":
        check_candidate_monotonicity(reports)
    return reports


def check_candidate_monotonicity(reports: Sequence[tuple[float, EvalReport]]) -> None:
    """Raising the threshold must never enlarge any question's candidate set."""
    previous: dict[str, int] = {}
    for value, report in reports:
        for res in report.results:
            if res.candidate_count is None:
                continue
            before = previous.get(res.question_id)
            if before is not None and res.candidate_count > before:
                raise SweepCheckError(
                    f"{res.question_id}: {res.candidate_count} candidates at threshold {value}, {before} below it"
                )
            previous[res.question_id] = res.candidate_count


# ---------------------------------------------------------------------------
# build-once check


@dataclass
class AmortizationReport:
    clips_per_video: dict[str, int]
    extraction_calls_first: dict[str, int]
    extraction_calls_reuse: dict[str, int]
    online_chat_calls: dict[str, int]
    expected_online_chat_calls: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def expected_chat_calls(trace: AnswerTrace) -> int:
    """Chat calls one structured-mode question should make, from the sizes its trace records."""
    n = 0
    if "analyze" in trace.stages_run:
        n += 1
    if "subqueries" in trace.stages_run:
        n += 1
        n += len(trace.ranked) * len(trace.subqueries)
    if "aggregate" in trace.stages_run:
        n += 1
    if "generate" in trace.stages_run:
        n += 1
    return n


def amortization_check(
    corpus: str | Path | CorpusIndex,
    workdir: str | Path,
    config: EngineConfig | None = None,
    backend_factory=None,
) -> AmortizationReport:
    """Build every graph once, answer all questions, then answer them again from the saved graphs.

    The first pass must make exactly one extraction call per clip and the
    second none at all.
    """
    corpus = corpus if isinstance(corpus, CorpusIndex) else load_corpus(corpus)
    config = config or EngineConfig()
    factory = backend_factory or (lambda: default_backends(corpus))
    if any(len(v.questions) < 2 for v in corpus.videos):
        raise ValueError("the build-once check needs at least two questions per video")
    gdir = Path(workdir) / "graphs"
    if gdir.exists() and any(gdir.iterdir()):
        raise ValueError(f"{gdir} already holds graphs")

    clips = {v.video_id: v.clip_count for v in corpus.videos}
    first: dict[str, int] = {}
    online: dict[str, int] = {}
    expected: dict[str, int] = {}
    backends = factory()
    graphs: dict[str, VideoGraph] = {}
    for video in corpus.videos:
        marks = _marks(backends)
        graphs[video.video_id], _ = build_or_load(video, backends, config, gdir / f"{video.video_id}.json")
        first[video.video_id] = _calls_since(backends, marks).get("chat:extract", 0)
    for video in corpus.videos:
        for q in video.questions:
            marks = _marks(backends)
            trace = answer_question(q["question"], q["options"], graphs[video.video_id], backends, config, question_id=q["question_id"])
            calls = _calls_since(backends, marks)
            online[q["question_id"]] = sum(v for k, v in calls.items() if k.startswith("chat:"))
            expected[q["question_id"]] = expected_chat_calls(trace)

    backends = factory()
    reuse: dict[str, int] = {}
    for video in corpus.videos:
        marks = _marks(backends)
        graph, built = build_or_load(video, backends, config, gdir / f"{video.video_id}.json")
        for q in video.questions:
            answer_question(q["question"], q["options"], graph, backends, config, question_id=q["question_id"])
        reuse[video.video_id] = _calls_since(backends, marks).get("chat:extract", 0)

    report = AmortizationReport(clips, first, reuse, online, expected)
    if first != clips:
        raise AmortizationError(f"extraction calls {first} differ from clip counts {clips}")
    if any(reuse.values()):
        raise AmortizationError(f"reusing saved graphs still made extraction calls: {reuse}")
    if online != expected:
        raise AmortizationError(f"online chat calls {online} differ from the expected {expected}")
    return report
