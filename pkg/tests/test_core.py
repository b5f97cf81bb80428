import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipgraph.core import (
    ClipRecord,
    ConfigError,
    EngineConfig,
    GraphFormatError,
    PrototypeEntity,
    VideoGraph,
    check_graph,
    cosine_similarity,
    dumps_graph,
    graph_problems,
    load_graph,
    loads_graph,
    recompute_adjacency,
    save_graph,
)
from clipgraph.core.similarity import exceeds, quantize_embedding, reaches

from conftest import build_from_sidecars, random_sidecars


# --- cosine -----------------------------------------------------------------

@pytest.mark.parametrize(
    "a,b,expected",
    [([1, 0], [1, 0], 1.0), ([1, 0], [0, 1], 0.0), ([3, 4], [4, 3], 0.96)],
)
def test_cosine_examples(a, b, expected):
    assert cosine_similarity(a, b) == pytest.approx(expected, abs=1e-12)


def test_cosine_rejects_bad_input():
    with pytest.raises(ValueError, match="dimension"):
        cosine_similarity([1, 0], [1, 0, 0])
    with pytest.raises(ValueError, match="zero"):
        cosine_similarity([0, 0], [1, 0])


vectors = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=12).filter(
    lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3
)


@given(vectors)
def test_cosine_self_is_one(a):
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-9)


@given(st.data(), st.floats(1e-3, 1e3))
def test_cosine_scale_invariant_and_symmetric(data, alpha):
    a = data.draw(vectors)
    b = data.draw(st.lists(st.floats(-100, 100, allow_nan=False), min_size=len(a), max_size=len(a)).filter(
        lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3
    ))
    s = cosine_similarity(a, b)
    assert -1.0 <= s <= 1.0
    assert cosine_similarity(np.asarray(a) * alpha, b) == pytest.approx(s, abs=1e-9)
    assert cosine_similarity(b, a) == pytest.approx(s, abs=1e-12)


def test_threshold_helpers():
    assert exceeds(0.51, 0.5) and not exceeds(0.5, 0.5)
    assert reaches(0.7, 0.7) and reaches(0.7 - 1e-9, 0.7) and not reaches(0.69, 0.7)


def test_quantize_keeps_seven_significant_digits():
    q = quantize_embedding([0.123456789, -9.87654321e-5, 0.0])
    assert list(q) == [0.1234568, -9.876543e-5, 0.0]


# --- config -----------------------------------------------------------------

def test_engine_config_defaults():
    cfg = EngineConfig()
    assert (cfg.frames_per_clip, cfg.sample_fps, cfg.merge_threshold) == (64, 1.0, 0.7)
    assert (cfg.retrieval_threshold, cfg.retrieval_top_n, cfg.refine_max_r) == (0.5, 20, 5)
    assert cfg.refinement_strategy == "structured"


@pytest.mark.parametrize(
    "changes",
    [
        {"refine_max_r": 21},
        {"frames_per_clip": 0},
        {"merge_threshold": 1.5},
        {"refinement_strategy": "greedy"},
        {"sample_fps": 0},
    ],
)
def test_engine_config_rejects(changes):
    with pytest.raises(ConfigError):
        EngineConfig(**changes)


def test_engine_config_round_trip():
    cfg = EngineConfig(refine_max_r=3, refinement_strategy="none")
    assert EngineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        EngineConfig.from_dict({"gamma": 1})


# --- adjacency ----------------------------------------------------------------

def _proto(pid, nodes):
    p = PrototypeEntity(pid, "x")
    for n in nodes:
        p.add_member(n, "x", "x")
    return p


def test_recompute_adjacency_examples():
    assert recompute_adjacency([_proto("a", [1, 3]), _proto("b", [2])]) == {(1, 3)}
    assert recompute_adjacency([_proto("a", [1, 2, 3])]) == {(1, 2), (1, 3), (2, 3)}
    assert recompute_adjacency([]) == set()


# --- persistence --------------------------------------------------------------

def _three_clip_graph():
    sidecars = {
        0: {"entities": [{"name": "cup", "description": "a red cup"}], "actions": [], "scenes": [{"location": "kitchen"}]},
        1: {"entities": [{"name": "cup", "description": "a red cup"}, {"name": "dog", "description": "a brown dog"}], "actions": [{"entity_name": "dog", "description": "barking"}], "scenes": []},
        2: {"entities": [{"name": "dog", "description": "a brown dog"}], "actions": [], "scenes": []},
    }
    graph, _ = build_from_sidecars(sidecars, subtitles=["hello", "", "bye"])
    return graph


def _same_graph(a: VideoGraph, b: VideoGraph) -> bool:
    return dumps_graph(a) == dumps_graph(b) and a.adjacency == b.adjacency


def test_round_trip_three_clips(tmp_path):
    graph = _three_clip_graph()
    assert graph.adjacency == {(0, 1), (1, 2)}
    path = save_graph(graph, tmp_path / "g.json")
    loaded = load_graph(path)
    assert _same_graph(graph, loaded)
    assert loaded.config == graph.config
    for p, q in zip(graph.prototypes, loaded.prototypes):
        assert np.array_equal(p.embedding, q.embedding)
    check_graph(loaded)


def test_saved_file_fields(tmp_path):
    data = json.loads(save_graph(_three_clip_graph(), tmp_path / "g.json").read_text())
    assert set(data) == {"version", "video_id", "config", "clips", "prototypes", "adjacency"}
    assert data["adjacency"] == [[0, 1], [1, 2]]


def test_load_missing_prototypes_names_field():
    data = json.loads(dumps_graph(_three_clip_graph()))
    del data["prototypes"]
    with pytest.raises(GraphFormatError) as err:
        loads_graph(json.dumps(data))
    assert err.value.field == "prototypes"


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda d: d.update(version=99), "version"),
        (lambda d: d["clips"][0].pop("frame_end"), "clips[0].frame_end"),
        (lambda d: d["adjacency"].append([2, 1]), "adjacency[2]"),
        (lambda d: d.update(extra=1), "extra"),
    ],
)
def test_load_errors_name_field(mutate, field):
    data = json.loads(dumps_graph(_three_clip_graph()))
    mutate(data)
    with pytest.raises(GraphFormatError) as err:
        loads_graph(json.dumps(data))
    assert err.value.field == field


def test_load_rejects_garbage():
    with pytest.raises(GraphFormatError):
        loads_graph("{not json")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 8))
def test_persistence_property(seed, clips):
    graph, _ = build_from_sidecars(random_sidecars(random.Random(seed), clips))
    text = dumps_graph(graph)
    loaded = loads_graph(text)
    assert recompute_adjacency(loaded) == graph.adjacency
    # reserialisation is idempotent
    assert dumps_graph(loaded) == text
    assert dumps_graph(loads_graph(dumps_graph(loaded))) == text


def test_validator_flags_corruption():
    graph = _three_clip_graph()
    assert graph_problems(graph) == []
    graph.adjacency.add((0, 2))
    assert any("adjacency" in p for p in graph_problems(graph))
    graph = _three_clip_graph()
    graph.prototypes[0].canonical_description = "something else"
    assert any("canonical" in p for p in graph_problems(graph))
    graph = _three_clip_graph()
    graph.clips[1] = ClipRecord(5, 4, 8)
    assert graph_problems(graph)
