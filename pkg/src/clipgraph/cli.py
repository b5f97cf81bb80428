"""Command-line interface: build, query, eval, inspect and gen-corpus.

Exit codes: 0 success, 2 build error, 3 query or evaluation error,
4 configuration error. Settings resolve as command-line flag, then the
JSON config file, then built-in defaults; the API key is only ever read
from the environment.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from .backends import (
    DEFAULT_EMBED_MODEL,
    BackendError,
    Backends,
    BackendTrace,
    HttpChatBackend,
    HttpEmbedBackend,
    HttpSettings,
    SidecarStore,
    mock_backends,
)
from .backends.http import DEFAULT_API_KEY_ENV
from .builder import ExtractionError, build_graph, load_subtitles, segment_video
from .core.store import GraphFormatError, dumps_canonical, load_graph, save_graph
from .core.types import MERGE_TEXT_MODES, REFINEMENT_STRATEGIES, ConfigError, EngineConfig, VideoGraph
from .generation import answer_question
from .harness.corpus import CorpusError, SyntheticCorpusSpec, generate_corpus, load_video_fixture, write_corpus
from .harness.evaluate import MODES, SWEEP_PARAMETERS, SweepCheckError, run_eval, sweep

EXIT_OK, EXIT_BUILD, EXIT_QUERY, EXIT_CONFIG = 0, 2, 3, 4

logger = logging.getLogger("clipgraph")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# configuration

BACKEND_FIELDS = ("backend", "chat_url", "chat_model", "embed_url", "embed_model", "api_key_env", "media_url_template", "timeout_s")
_ENGINE_ALIASES = {"refine_max_r": ["--r"], "refinement_strategy": ["--strategy"]}


@dataclass
class CliConfig:
    engine: EngineConfig
    backend: str
    chat_url: str | None
    chat_model: str | None
    embed_url: str | None
    embed_model: str
    api_key_env: str
    media_url_template: str | None
    timeout_s: float
    workdir: Path
    verbosity: int

    def path(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.workdir / p


def _read_config_file(path: Path) -> dict[str, Any]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - {"engine", "backend"}
    if unknown:
        raise ConfigError(f"unknown config file section(s): {sorted(unknown)}")
    backend = data.get("backend", {})
    bad = set(backend) - set(BACKEND_FIELDS) - {"kind"}
    if bad:
        raise ConfigError(f"unknown backend setting(s): {sorted(bad)}")
    return data


def resolve_config(args: argparse.Namespace) -> CliConfig:
    workdir = Path(args.workdir or ".")
    file_data: dict[str, Any] = {}
    if args.config:
        cfg_path = Path(args.config)
        file_data = _read_config_file(cfg_path if cfg_path.is_absolute() else workdir / cfg_path)
    engine_values = dict(file_data.get("engine", {}))
    for f in fields(EngineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            engine_values[f.name] = value
    engine = EngineConfig.from_dict(engine_values)
    backend_file = dict(file_data.get("backend", {}))
    if "kind" in backend_file:
        backend_file.setdefault("backend", backend_file.pop("kind"))

    def pick(name: str, default: Any) -> Any:
        value = getattr(args, name, None)
        if value is not None:
            return value
        return backend_file.get(name, default)

    cfg = CliConfig(
        engine=engine,
        backend=pick("backend", "mock"),
        chat_url=pick("chat_url", None),
        chat_model=pick("chat_model", None),
        embed_url=pick("embed_url", None),
        embed_model=pick("embed_model", DEFAULT_EMBED_MODEL),
        api_key_env=pick("api_key_env", DEFAULT_API_KEY_ENV),
        media_url_template=pick("media_url_template", None),
        timeout_s=float(pick("timeout_s", 120.0)),
        workdir=workdir,
        verbosity=args.verbose,
    )
    if cfg.backend not in ("mock", "http"):
        raise ConfigError(f"backend must be mock or http, got {cfg.backend!r}")
    if cfg.backend == "http" and not (cfg.chat_url and cfg.chat_model):
        raise ConfigError("the http backend needs --chat-url and --chat-model")
    return cfg


def make_backends(cfg: CliConfig, sidecars: SidecarStore | None = None) -> Backends:
    if cfg.backend == "mock":
        return mock_backends(sidecars or SidecarStore())
    trace = BackendTrace()
    chat = HttpSettings(
        cfg.chat_url, cfg.chat_model, cfg.api_key_env, cfg.timeout_s,
        media_url_template=cfg.media_url_template, sample_fps=cfg.engine.sample_fps,
    )
    embed = HttpSettings(cfg.embed_url or cfg.chat_url, cfg.embed_model, cfg.api_key_env, cfg.timeout_s)
    return Backends(HttpChatBackend(chat, trace), HttpEmbedBackend(embed, trace))


def sidecars_from_graph(graph: VideoGraph) -> SidecarStore:
    """Mock 'video' for a saved graph: each clip shows what its extraction record says."""
    store = SidecarStore()
    for clip in graph.clips:
        if clip.extraction is not None:
            store.add(graph.video_id, clip.clip_index, clip.extraction.to_dict())
    return store


# ---------------------------------------------------------------------------
# commands


def cmd_build(args: argparse.Namespace, cfg: CliConfig) -> int:
    video_dir = cfg.path(args.video_dir) if args.video_dir else None
    meta: dict[str, Any] = {}
    if video_dir is not None:
        if not video_dir.is_dir():
            raise ConfigError(f"video directory {video_dir} does not exist")
        if (video_dir / "meta.json").exists():
            meta = json.loads((video_dir / "meta.json").read_text(encoding="utf-8"))
    video_id = args.video_id or meta.get("video_id") or (video_dir.name if video_dir else None)
    frame_count = args.frame_count or meta.get("frame_count")
    if not video_id:
        raise ConfigError("need --video-id or a video directory")
    engine = cfg.engine
    overrides = {k: meta[k] for k in ("frames_per_clip", "sample_fps") if k in meta and getattr(args, k, None) is None}
    if overrides:
        engine = engine.with_overrides(**overrides)
    sidecars = SidecarStore()
    if cfg.backend == "mock":
        if video_dir is None:
            raise ConfigError("the mock backend needs --video-dir with clip sidecars")
        sidecars.load_video_dir(video_dir, video_id)
        if frame_count is None and sidecars.clip_indices(video_id):
            frame_count = (max(sidecars.clip_indices(video_id)) + 1) * engine.frames_per_clip
    if not frame_count:
        raise ConfigError("need --frame-count or a meta.json with frame_count")
    clip_count = len(segment_video(int(frame_count), engine.frames_per_clip))

    subtitles: list[str] = []
    sub_path = cfg.path(args.subtitles) if args.subtitles else (video_dir / "subtitles" if video_dir else None)
    if sub_path is not None and sub_path.exists():
        subtitles = load_subtitles(sub_path, clip_count, engine)

    out = cfg.path(args.out) if args.out else cfg.path(Path("graphs") / f"{video_id}.json")
    if out.exists() and not args.force:
        print(f"error: {out} exists; pass --force to rebuild", file=sys.stderr)
        return EXIT_BUILD
    backends = make_backends(cfg, sidecars)
    try:
        graph = build_graph(video_id, int(frame_count), subtitles, backends, engine, lenient=args.lenient)
    except (ExtractionError, BackendError) as exc:
        print(f"error: build failed: {exc}", file=sys.stderr)
        return EXIT_BUILD
    save_graph(graph, out)
    print(f"graph: {out}")
    print(f"clips: {graph.clip_count}")
    print(f"prototypes: {len(graph.prototypes)}")
    print(f"edges: {len(graph.adjacency)}")
    if graph.skipped_clips():
        print(f"skipped clips: {graph.skipped_clips()}")
    print(f"extraction calls: {backends.chat.trace.count('chat', 'extract')}")
    return EXIT_OK


def _parse_options(args: argparse.Namespace, cfg: CliConfig) -> dict[str, str]:
    options: dict[str, str] = {}
    if args.options_json:
        text = args.options_json
        candidate = cfg.path(text)
        if not text.lstrip().startswith("{") and candidate.exists():
            text = candidate.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--options-json is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("--options-json must be an object of letter -> text")
        options.update({str(k).upper(): str(v) for k, v in data.items()})
    for i, opt in enumerate(args.option or []):
        if len(opt) > 2 and opt[0].isalpha() and opt[1] == "=":
            options[opt[0].upper()] = opt[2:]
        else:
            options["ABCDEFGHIJKLMNOPQRSTUVWXYZ"[len(options)]] = opt
    return options


def cmd_query(args: argparse.Namespace, cfg: CliConfig) -> int:
    options = _parse_options(args, cfg)
    graph_path = cfg.path(args.graph)
    try:
        graph = load_graph(graph_path)
    except (OSError, GraphFormatError, ValueError) as exc:
        print(f"error: cannot load graph {graph_path}: {exc}", file=sys.stderr)
        return EXIT_QUERY
    sidecars = None
    if cfg.backend == "mock":
        sidecars = SidecarStore()
        if args.video_dir:
            sidecars.load_video_dir(cfg.path(args.video_dir), graph.video_id)
        else:
            sidecars = sidecars_from_graph(graph)
    backends = make_backends(cfg, sidecars)
    retrieval, strategy = MODES[args.mode]
    if strategy is None:
        strategy = cfg.engine.refinement_strategy
    trace = answer_question(
        args.question, options, graph, backends, cfg.engine,
        question_id=args.question_id, retrieval=retrieval, strategy=strategy,
    )
    out = cfg.path(args.trace_out) if args.trace_out else cfg.path(Path("traces") / f"{graph.video_id}-{args.question_id}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_canonical(trace.to_dict()), encoding="utf-8")
    if trace.error:
        print(f"error: stage {trace.error['stage']} failed: {trace.error['message']}", file=sys.stderr)
        print(f"trace: {out}")
        return EXIT_QUERY
    if options:
        print(f"answer: {trace.parsed_option if trace.parsed_option else '(unparsed) ' + trace.raw_answer.strip()}")
    else:
        print(f"answer: {trace.raw_answer.strip()}")
    print(f"clips: {trace.media_clips}")
    if trace.fallback_used:
        print(f"fallback: {trace.fallback_reason}")
    print(f"trace: {out}")
    return EXIT_OK


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``r=1..6`` or ``retrieval_threshold=0.3,0.5,0.7``."""
    if "=" not in text:
        raise ConfigError(f"--sweep wants PARAM=VALUES, got {text!r}")
    name, spec = text.split("=", 1)
    name = name.strip().replace("-", "_")
    if name not in SWEEP_PARAMETERS:
        raise ConfigError(f"cannot sweep {name!r}; choose from {sorted(SWEEP_PARAMETERS)}")
    integer = SWEEP_PARAMETERS[name] != "retrieval_threshold"
    try:
        if ".." in spec:
            lo, hi = spec.split("..", 1)
            values: list[float] = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) if integer else float(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {spec!r}") from exc
    if not values:
        raise ConfigError("empty sweep")
    return name, sorted(values)


def cmd_eval(args: argparse.Namespace, cfg: CliConfig) -> int:
    corpus = cfg.path(args.corpus)
    out = cfg.path(args.out) if args.out else cfg.path(Path("eval") / args.mode)
    try:
        if args.sweep:
            name, values = parse_sweep(args.sweep)
            reports = sweep(corpus, name, values, args.mode, cfg.engine, out_dir=out)
            for value, rep in reports:
                acc = rep.per_type_accuracy
                print(f"{name}={value}: mode {rep.mode}, accuracy {rep.accuracy:.3f}, per type {acc}")
            print(f"reports: {out}")
            return EXIT_OK
        report = run_eval(corpus, args.mode, cfg.engine, out_dir=out)
    except CorpusError as exc:
        raise ConfigError(str(exc)) from exc
    except SweepCheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUERY
    print(report.render_text(), end="")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def describe_graph(graph: VideoGraph, top: int = 5) -> str:
    lines = [
        f"video: {graph.video_id}",
        f"{graph.clip_count} clips, {len(graph.prototypes)} prototypes, {len(graph.adjacency)} edges",
    ]
    skipped = graph.skipped_clips()
    if skipped:
        lines.append(f"clips without extraction: {skipped}")
    lines.append("nodes:")
    for clip in graph.clips:
        n = len(clip.extraction.entities) if clip.extraction else 0
        lines.append(f"  [{clip.clip_index}] frames {clip.frame_start}-{clip.frame_end}, {n} entities, degree {graph.degree(clip.clip_index)}")
    lines.append("prototypes:")
    for proto in graph.prototypes:
        lines.append(
            f"  {proto.prototype_id} {proto.canonical_name!r}: {len(proto.member_forms)} members in clips {proto.node_set}"
            f" - {proto.canonical_description}"
        )
    ranked = sorted(graph.clips, key=lambda c: (-graph.degree(c.clip_index), c.clip_index))[:top]
    lines.append("top-degree nodes:")
    for clip in ranked:
        lines.append(f"  [{clip.clip_index}] degree {graph.degree(clip.clip_index)}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args: argparse.Namespace, cfg: CliConfig) -> int:
    path = cfg.path(args.graph)
    try:
        graph = load_graph(path)
    except (OSError, GraphFormatError, ValueError) as exc:
        print(f"error: cannot load graph {path}: {exc}", file=sys.stderr)
        return EXIT_QUERY
    print(describe_graph(graph, args.top), end="")
    return EXIT_OK


def cmd_gen_corpus(args: argparse.Namespace, cfg: CliConfig) -> int:
    try:
        spec = SyntheticCorpusSpec(
            seed=args.seed,
            videos=args.videos,
            clips_per_video=args.clips_per_video,
            entities_per_video=args.entities_per_video,
            aliases_per_entity=args.aliases_per_entity,
            questions=tuple(q.strip() for q in args.questions.split(",") if q.strip()),
            hard_negatives=args.hard_negatives,
            count_plantings=tuple(int(v) for v in args.count_plantings.split(",")) if args.count_plantings else None,
            frames_per_clip=cfg.engine.frames_per_clip,
            sample_fps=cfg.engine.sample_fps,
            merge_threshold=cfg.engine.merge_threshold,
            retrieval_threshold=cfg.engine.retrieval_threshold,
            oracle_r=cfg.engine.refine_max_r,
        )
        out = write_corpus(generate_corpus(spec), cfg.path(args.out), overwrite=args.force)
    except (CorpusError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    index = json.loads((out / "corpus.json").read_text(encoding="utf-8"))
    print(f"corpus: {out}")
    print(f"videos: {len(index['videos'])}")
    print(f"oracle: {json.dumps(index['oracle'], sort_keys=True)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("general")
    g.add_argument("--workdir", help="base directory for every relative path (default: current directory)")
    g.add_argument("--config", help="JSON config file with 'engine' and 'backend' sections")
    g.add_argument("-v", "--verbose", action="count", default=0, help="more logging; repeat for debug")
    b = p.add_argument_group("backend")
    b.add_argument("--backend", choices=("mock", "http"), help="model backend (default: mock)")
    b.add_argument("--chat-url", help="base URL of an OpenAI-compatible chat server")
    b.add_argument("--chat-model", help="chat model name")
    b.add_argument("--embed-url", help="base URL of the embedding server (default: chat URL)")
    b.add_argument("--embed-model", help=f"embedding model name (default: {DEFAULT_EMBED_MODEL})")
    b.add_argument("--api-key-env", help=f"environment variable holding the API key (default: {DEFAULT_API_KEY_ENV})")
    b.add_argument("--media-url-template", help="URL template for attaching clips, e.g. file:///v/{video_id}.mp4#t={start_s},{end_s}")
    b.add_argument("--timeout-s", type=float, help="HTTP timeout in seconds (default: 120)")
    e = p.add_argument_group("engine")
    for f in fields(EngineConfig):
        flags = ["--" + f.name.replace("_", "-")] + _ENGINE_ALIASES.get(f.name, [])
        kwargs: dict[str, Any] = {"dest": f.name, "default": None, "help": f"(default: {f.default})"}
        if f.type in ("bool", bool):
            kwargs["action"] = argparse.BooleanOptionalAction
        elif f.name == "refinement_strategy":
            kwargs["choices"] = REFINEMENT_STRATEGIES
        elif f.name == "merge_text":
            kwargs["choices"] = MERGE_TEXT_MODES
        else:
            kwargs["type"] = {"int": int, "float": float}.get(str(f.type), str)
        e.add_argument(*flags, **kwargs)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = _Parser(prog="clipgraph", description="Graph-based retrieval and reasoning for long-video question answering.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", parents=[common], help="build and save the clip graph of one video")
    p.add_argument("--video-dir", help="directory with meta.json, sidecars/ and subtitles/")
    p.add_argument("--video-id", help="video id (default: from meta.json or directory name)")
    p.add_argument("--frame-count", type=int, help="number of sampled frames (default: from meta.json)")
    p.add_argument("--subtitles", help="per-clip subtitle directory or one timed caption file")
    p.add_argument("--out", help="graph file (default: graphs/<video_id>.json)")
    p.add_argument("--force", action="store_true", help="overwrite an existing graph file")
    p.add_argument("--lenient", action="store_true", help="skip clips whose extraction fails instead of aborting")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", parents=[common], help="answer one question over a saved graph")
    p.add_argument("--graph", required=True, help="graph file written by build")
    p.add_argument("--question", required=True)
    p.add_argument("--option", action="append", help="answer option, 'A=text' or plain text (repeatable)")
    p.add_argument("--options-json", help="options as a JSON object or a path to one")
    p.add_argument("--mode", choices=sorted(MODES), default="vgent", help="pipeline variant (default: vgent)")
    p.add_argument("--question-id", default="query", help="id recorded in the trace (default: query)")
    p.add_argument("--video-dir", help="clip sidecars for the mock backend (default: read from the graph)")
    p.add_argument("--trace-out", help="trace file (default: traces/<video_id>-<question_id>.json)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", parents=[common], help="evaluate a corpus in one mode, optionally sweeping a parameter")
    p.add_argument("--corpus", required=True, help="corpus directory with corpus.json")
    p.add_argument("--mode", choices=sorted(MODES), default="vgent")
    p.add_argument("--sweep", help="PARAM=VALUES, e.g. r=1..6 or retrieval_threshold=0.3,0.5,0.7")
    p.add_argument("--out", help="output directory (default: eval/<mode>)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", parents=[common], help="summarise a saved graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--top", type=int, default=5, help="how many top-degree nodes to list")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen-corpus", parents=[common], help="write a synthetic corpus with planted answers")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=5)
    p.add_argument("--clips-per-video", type=int, default=24)
    p.add_argument("--entities-per-video", type=int, default=8)
    p.add_argument("--aliases-per-entity", type=int, default=2)
    p.add_argument("--questions", default="needle,needle_alias,count,order,topic", help="comma-separated question types per video")
    p.add_argument("--hard-negatives", type=int, default=6)
    p.add_argument("--count-plantings", help="comma-separated count per video (default: 1..5 cycling)")
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    p.set_defaults(func=cmd_gen_corpus)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
