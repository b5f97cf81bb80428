import json
import subprocess
import sys

import pytest

from clipgraph.cli import EXIT_BUILD, EXIT_CONFIG, EXIT_OK, EXIT_QUERY, main, parse_sweep
from clipgraph.core import ConfigError, load_graph

from conftest import write_video_dir


def _ents(*pairs):
    return {"entities": [{"name": n, "description": d} for n, d in pairs], "actions": [], "scenes": []}


FOUR = {
    0: _ents(("cup", "a red cup")),
    1: _ents(("cup", "a red cup"), ("dog", "a brown dog")),
    2: _ents(("dog", "a brown dog")),
    3: _ents(("lamp", "a tall lamp")),
}


@pytest.fixture
def laptop_graph(tmp_path, laptop_dir, capsys):
    out = tmp_path / "laptop.json"
    assert main(["build", "--video-dir", str(laptop_dir), "--out", str(out)]) == EXIT_OK
    capsys.readouterr()
    return out


def _query(graph, *extra):
    return main(["query", "--graph", str(graph), "--question", "Did I open the laptop?", "--option", "A=yes", "--option", "B=no", *extra])


# --- build ------------------------------------------------------------------------

def test_build_four_clips(tmp_path, capsys):
    vdir = write_video_dir(tmp_path / "v", "four", FOUR)
    assert main(["build", "--video-dir", str(vdir), "--workdir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "clips: 4" in out and "extraction calls: 4" in out and "edges: 2" in out
    graph = load_graph(tmp_path / "graphs" / "four.json")
    assert len(graph.clips) == 4 and graph.adjacency == {(0, 1), (1, 2)}


def test_build_missing_sidecar_names_clip(tmp_path, capsys):
    vdir = write_video_dir(tmp_path / "v", "gap", {i: FOUR[i] for i in (0, 1, 3)})
    meta = json.loads((vdir / "meta.json").read_text())
    meta["frame_count"] = 4 * 64
    (vdir / "meta.json").write_text(json.dumps(meta))
    assert main(["build", "--video-dir", str(vdir), "--out", str(tmp_path / "g.json")]) == EXIT_BUILD
    assert "clip 2" in capsys.readouterr().err
    assert not (tmp_path / "g.json").exists()


def test_build_lenient_skips_missing(tmp_path, capsys):
    vdir = write_video_dir(tmp_path / "v", "gap", {i: FOUR[i] for i in (0, 1, 3)})
    assert main(["build", "--video-dir", str(vdir), "--frame-count", "256", "--lenient", "--out", str(tmp_path / "g.json")]) == EXIT_OK
    assert "skipped clips: [2]" in capsys.readouterr().out


def test_rebuild_needs_force(tmp_path, capsys):
    vdir = write_video_dir(tmp_path / "v", "four", FOUR)
    args = ["build", "--video-dir", str(vdir), "--out", str(tmp_path / "g.json")]
    assert main(args) == EXIT_OK
    assert main(args) == EXIT_BUILD
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == EXIT_OK


# --- query ------------------------------------------------------------------------

def test_query_laptop(laptop_graph, tmp_path, capsys):
    trace_path = tmp_path / "t.json"
    assert _query(laptop_graph, "--trace-out", str(trace_path)) == EXIT_OK
    out = capsys.readouterr().out
    assert "answer: A" in out and "clips: [6]" in out
    trace = json.loads(trace_path.read_text())
    assert trace["parsed_option"] == "A" and trace["media_clips"] == [6]


def test_query_strategy_none(laptop_graph, tmp_path, capsys):
    trace_path = tmp_path / "t.json"
    assert _query(laptop_graph, "--strategy", "none", "--trace-out", str(trace_path)) == EXIT_OK
    trace = json.loads(trace_path.read_text())
    assert trace["stages_skipped"] == ["subqueries", "verify", "refine", "aggregate"]
    assert trace["media_clips"] == [1, 3, 5, 6, 7]


def test_query_r_two(laptop_graph, tmp_path, capsys):
    trace_path = tmp_path / "t.json"
    assert _query(laptop_graph, "--strategy", "none", "--r", "2", "--trace-out", str(trace_path)) == EXIT_OK
    assert len(json.loads(trace_path.read_text())["media_clips"]) <= 2


def test_query_default_trace_path(laptop_graph, tmp_path, capsys):
    assert _query(laptop_graph, "--workdir", str(tmp_path), "--question-id", "q7") == EXIT_OK
    assert (tmp_path / "traces" / "laptop_demo-q7.json").exists()


def test_query_bad_graph(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert _query(bad) == EXIT_QUERY


def test_query_config_errors(laptop_graph, capsys):
    assert _query(laptop_graph, "--r", "21") == EXIT_CONFIG
    assert _query(laptop_graph, "--backend", "http") == EXIT_CONFIG
    assert "error" in capsys.readouterr().err
    # argparse rejects the choice itself
    with pytest.raises(SystemExit) as err:
        _query(laptop_graph, "--strategy", "greedy")
    assert err.value.code == EXIT_CONFIG


# --- inspect ----------------------------------------------------------------------

def test_inspect_single_clip(tmp_path, capsys):
    vdir = write_video_dir(tmp_path / "v", "one", {0: FOUR[0]})
    main(["build", "--video-dir", str(vdir), "--out", str(tmp_path / "g.json")])
    capsys.readouterr()
    assert main(["inspect", "--graph", str(tmp_path / "g.json")]) == EXIT_OK
    assert "1 clips, 1 prototypes, 0 edges" in capsys.readouterr().out


# --- eval and corpus --------------------------------------------------------------

def test_eval_naive_mode(default_corpus, tmp_path, capsys):
    out = tmp_path / "e"
    assert main(["eval", "--corpus", str(default_corpus), "--mode", "naive_rag", "--out", str(out)]) == EXIT_OK
    assert "mode: naive_rag" in capsys.readouterr().out
    assert json.loads((out / "report.json").read_text())["mode"] == "naive_rag"


def test_eval_r_sweep(default_corpus, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["eval", "--corpus", str(default_corpus), "--sweep", "r=1..6", "--out", str(out)]) == EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("r=")]
    assert len(lines) == 6
    assert len(list(out.glob("refine_max_r=*/report.json"))) == 6


def test_eval_missing_corpus(tmp_path, capsys):
    assert main(["eval", "--corpus", str(tmp_path / "none")]) == EXIT_CONFIG


def test_gen_corpus_cli(tmp_path, capsys):
    args = ["gen-corpus", "--out", str(tmp_path / "c"), "--seed", "7", "--videos", "1", "--clips-per-video", "10", "--entities-per-video", "3"]
    assert main(args) == EXIT_OK
    assert len(list((tmp_path / "c" / "vid000" / "sidecars").glob("*.json"))) == 10
    assert main(args) == EXIT_CONFIG
    assert main(args + ["--force"]) == EXIT_OK


def test_parse_sweep():
    assert parse_sweep("r=1..3") == ("r", [1, 2, 3])
    assert parse_sweep("theta=0.7,0.3") == ("theta", [0.3, 0.7])
    with pytest.raises(ConfigError):
        parse_sweep("gamma=1")
    with pytest.raises(ConfigError):
        parse_sweep("r")


# --- parser and config --------------------------------------------------------------

def test_help_lists_flags():
    res = subprocess.run([sys.executable, "-m", "clipgraph", "query", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--retrieval-threshold", "--retrieval-top-n", "--refine-max-r", "--strategy", "--merge-threshold", "--chat-url", "--config"):
        assert flag in res.stdout


def test_unknown_command_is_config_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == EXIT_CONFIG


def test_config_file_precedence(laptop_graph, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"engine": {"refine_max_r": 2, "refinement_strategy": "none"}}))
    t1, t2 = tmp_path / "t1.json", tmp_path / "t2.json"
    assert _query(laptop_graph, "--config", str(cfg), "--trace-out", str(t1)) == EXIT_OK
    trace = json.loads(t1.read_text())
    assert trace["config"]["refine_max_r"] == 2 and trace["strategy"] == "none"
    # flag beats file
    assert _query(laptop_graph, "--config", str(cfg), "--r", "4", "--trace-out", str(t2)) == EXIT_OK
    assert json.loads(t2.read_text())["config"]["refine_max_r"] == 4


def test_bad_config_file(laptop_graph, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"engine": {"gamma": 1}}))
    assert _query(laptop_graph, "--config", str(cfg)) == EXIT_CONFIG
    cfg.write_text(json.dumps({"secrets": {}}))
    assert _query(laptop_graph, "--config", str(cfg)) == EXIT_CONFIG
    cfg.write_text("{oops")
    assert _query(laptop_graph, "--config", str(cfg)) == EXIT_CONFIG
