import json

import jsonschema
import pytest

from clipgraph.backends import Backends
from clipgraph.backends.mock import MockEmbedBackend, ScriptedChatBackend
from clipgraph.core import EngineConfig
from clipgraph.generation import (
    TRACE_SCHEMA,
    AnswerParseError,
    answer_question,
    assemble_prompt,
    parse_mcq_answer,
)
from clipgraph.reasoning import AggregatedContext

from conftest import build_from_sidecars

LAPTOP_Q = "Did I open the laptop?"
YES_NO = {"A": "yes", "B": "no"}


def _check_schema(trace):
    jsonschema.validate(json.loads(json.dumps(trace.to_dict())), TRACE_SCHEMA)


# --- prompt assembly ------------------------------------------------------------

def test_prompt_order_and_content(laptop_built):
    graph, _ = laptop_built
    ctx = AggregatedContext("The lid was lifted.", [(6, "Is there a laptop open?", 1)], {"How many?": 2}, "| table |", False)
    clips = [graph.clip(6), graph.clip(1)]
    req = assemble_prompt(LAPTOP_Q, YES_NO, clips, ctx, graph.video_id)
    text = req.prompt_text
    order = [text.index(s) for s in ("The lid was lifted.", "| table |", "Totals:", "[Clip 1]", "[Clip 6]", "Question: Did I open", "A. yes", "B. no")]
    assert order == sorted(order)
    assert "[Clip 6] frames 384-448" in text
    assert [m.clip_index for m in req.media_refs] == [1, 6]
    assert req.task == "answer"


def test_open_question_has_no_options_block(laptop_built):
    graph, _ = laptop_built
    req = assemble_prompt("What is on the desk?", None, [graph.clip(0)], None, graph.video_id)
    assert "Options:" not in req.prompt_text
    assert "Verified observations" not in req.prompt_text


def test_prompt_subtitles_toggle():
    graph, _ = build_from_sidecars({0: {"entities": [{"name": "cup", "description": "a cup"}], "actions": [], "scenes": []}}, subtitles=["hello   there"])
    on = assemble_prompt("q?", None, graph.clips, None, "v").prompt_text
    off = assemble_prompt("q?", None, graph.clips, None, "v", include_subtitles=False).prompt_text
    assert "Subtitles: hello there" in on and "Subtitles" not in off


# --- answer parsing -----------------------------------------------------------------

@pytest.mark.parametrize(
    "raw,expected",
    [("Answer: B", "B"), ("(c) the plate", "C"), ("A", "A"), ("b.", "B"), ("The answer is (D).", "D"), ("C) a cup", "C")],
)
def test_parse_mcq(raw, expected):
    assert parse_mcq_answer(raw, "ABCD") == expected


def test_parse_mcq_failure():
    with pytest.raises(AnswerParseError):
        parse_mcq_answer("The video shows a boat.", "ABCD")
    # letters outside the option set are ignored
    with pytest.raises(AnswerParseError):
        parse_mcq_answer("Answer: E", "AB")


# --- end to end on the laptop fixture ----------------------------------------------------

def test_laptop_question_full_pipeline(laptop_built):
    graph, backends = laptop_built
    trace = answer_question(LAPTOP_Q, YES_NO, graph, backends, question_id="laptop_q0")
    assert trace.ok and trace.parsed_option == "A"
    assert [c.clip_index for c in trace.ranked] == [6, 1, 3, 5, 7]
    assert [c.clip_index for c in trace.refined] == [6]
    assert trace.media_clips == [6]
    assert trace.stages_run[:3] == ["analyze", "retrieve", "rerank"]
    assert {"subqueries", "verify", "refine", "aggregate", "generate"} <= set(trace.stages_run)
    assert not trace.fallback_used
    assert "Verified observations" in trace.final_prompt
    _check_schema(trace)


def test_strategy_none_skips_reasoning(laptop_built):
    graph, backends = laptop_built
    trace = answer_question(LAPTOP_Q, YES_NO, graph, backends, strategy="none")
    assert trace.stages_skipped == ["subqueries", "verify", "refine", "aggregate"]
    assert trace.media_clips == [1, 3, 5, 6, 7]
    assert trace.matrix is None and trace.context is None
    assert "verify" not in trace.call_counts
    _check_schema(trace)


@pytest.mark.parametrize("r", [1, 2, 3, 5])
def test_media_never_exceeds_r(laptop_built, r):
    graph, backends = laptop_built
    cfg = EngineConfig(refine_max_r=r)
    for strategy in ("structured", "none", "confidence"):
        for retrieval in ("graph", "naive"):
            trace = answer_question(LAPTOP_Q, YES_NO, graph, backends, cfg, retrieval=retrieval, strategy=strategy)
            assert trace.ok and len(trace.media_clips) <= r
            _check_schema(trace)


def test_traces_are_deterministic(laptop_built):
    graph, backends = laptop_built
    a = answer_question(LAPTOP_Q, YES_NO, graph, backends).to_dict()
    b = answer_question(LAPTOP_Q, YES_NO, graph, backends).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert "timings" not in a


def test_no_positive_clip_falls_back_to_top_r(laptop_built):
    graph, backends = laptop_built
    chat = ScriptedChatBackend({
        "analyze": '{"keywords": ["laptop"]}',
        "subqueries": '["Is there a violin?"]',
        "verify": "no",
        "answer": "B",
    })
    cfg = EngineConfig(refine_max_r=2)
    trace = answer_question(LAPTOP_Q, YES_NO, graph, Backends(chat, MockEmbedBackend()), cfg)
    assert trace.fallback_used and trace.fallback_reason == "empty_refinement"
    assert trace.context is None and "Verified observations" not in trace.final_prompt
    assert len(trace.media_clips) == 2 and trace.parsed_option == "B"
    _check_schema(trace)


def test_empty_retrieval_uses_uniform_clips(laptop_built):
    graph, backends = laptop_built
    chat = ScriptedChatBackend({"analyze": '{"keywords": ["violin"]}', "answer": "A"})
    trace = answer_question("Is there a violin?", YES_NO, graph, Backends(chat, MockEmbedBackend()), strategy="none")
    assert trace.candidate_count == 0 and trace.route == "uniform_empty"
    assert trace.fallback_reason == "empty_retrieval"
    # stride ceil(8/5) = 2 yields four clips, fewer than r
    assert trace.media_clips == [0, 2, 4, 6]
    _check_schema(trace)


def test_global_question_uses_uniform_route(laptop_built):
    graph, _ = laptop_built
    chat = ScriptedChatBackend({"analyze": '{"global": "yes"}', "answer": "A"})
    trace = answer_question("What happens overall?", YES_NO, graph, Backends(chat, MockEmbedBackend()), strategy="none")
    assert trace.route == "uniform_global" and not trace.fallback_used
    assert trace.media_clips == [0, 2, 4, 6]


def test_stage_failure_recorded_not_raised(laptop_built):
    graph, _ = laptop_built
    chat = ScriptedChatBackend({"analyze": "no json here"})
    trace = answer_question(LAPTOP_Q, YES_NO, graph, Backends(chat, MockEmbedBackend()))
    assert not trace.ok and trace.error["stage"] == "analyze"
    assert trace.parsed_option is None
    _check_schema(trace)


def test_unparseable_answer_recorded(laptop_built):
    graph, _ = laptop_built
    chat = ScriptedChatBackend({"analyze": '{"keywords": ["laptop"]}', "answer": "I am not sure."})
    trace = answer_question(LAPTOP_Q, YES_NO, graph, Backends(chat, MockEmbedBackend()), strategy="none")
    assert trace.ok and trace.parsed_option is None and trace.parse_error
    _check_schema(trace)


def test_count_totals_reach_prompt():
    sidecars = {
        i: {
            "entities": [{"name": "cabinet", "description": "a wooden cabinet"}],
            "actions": [{"entity_name": "cabinet", "description": "open the cabinet"}] if i in (1, 4, 6) else [],
            "scenes": [],
        }
        for i in range(8)
    }
    graph, backends = build_from_sidecars(sidecars)
    q = "How many times did I open the cabinet?"
    trace = answer_question(q, {"A": "1", "B": "2", "C": "3", "D": "4"}, graph, backends)
    assert trace.ok
    assert sorted(c.clip_index for c in trace.refined) == [1, 4, 6]
    assert list(trace.context.totals.values()) == [3]
    assert trace.parsed_option == "C"
    assert "Totals:" in trace.final_prompt
