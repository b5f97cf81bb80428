from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from clipgraph.backends import SidecarStore, mock_backends
from clipgraph.builder import build_graph
from clipgraph.core import EngineConfig
from clipgraph.harness import SyntheticCorpusSpec, generate_corpus, write_corpus

FIXTURES = Path(__file__).parent / "fixtures"

# small vocabulary so random descriptions overlap often, straddling the merge threshold
WORDS = "red blue green laptop plate sink desk cup table chair window door lamp book bag".split()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def laptop_dir() -> Path:
    return FIXTURES / "laptop"


@pytest.fixture
def sailboat_raw() -> str:
    return (FIXTURES / "sailboat_raw.txt").read_text(encoding="utf-8")


def random_sidecars(rng: random.Random, clips: int, max_entities: int = 4) -> dict[int, dict]:
    out = {}
    for i in range(clips):
        ents = []
        for j in range(rng.randint(0, max_entities)):
            desc = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 4)))
            ents.append({"name": f"thing{j}", "description": desc})
        acts = [{"entity_name": e["name"], "description": "moving " + rng.choice(WORDS)} for e in ents[:1]]
        out[i] = {"entities": ents, "actions": acts, "scenes": [{"location": rng.choice(WORDS)}]}
    return out


def build_from_sidecars(sidecars: dict[int, dict], video_id: str = "v", config: EngineConfig | None = None, subtitles=None):
    config = config or EngineConfig(frames_per_clip=4)
    store = SidecarStore()
    store.add_map(video_id, sidecars)
    backends = mock_backends(store)
    n = len(sidecars)
    graph = build_graph(video_id, n * config.frames_per_clip, subtitles or [], backends, config)
    return graph, backends


def write_video_dir(root: Path, video_id: str, sidecars: dict[int, dict], frames_per_clip: int = 64) -> Path:
    (root / "sidecars").mkdir(parents=True, exist_ok=True)
    for i, rec in sidecars.items():
        (root / "sidecars" / f"clip_{i:04d}.json").write_text(json.dumps(rec), encoding="utf-8")
    meta = {"video_id": video_id, "frame_count": len(sidecars) * frames_per_clip, "frames_per_clip": frames_per_clip, "sample_fps": 1.0}
    (root / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
    return root


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("corpus") / "default"
    write_corpus(generate_corpus(SyntheticCorpusSpec()), out)
    return out


@pytest.fixture
def laptop_built(laptop_dir):
    """(graph, backends) for the eight-clip laptop video."""
    store = SidecarStore()
    video_id = store.load_video_dir(laptop_dir)
    meta = json.loads((laptop_dir / "meta.json").read_text())
    backends = mock_backends(store)
    graph = build_graph(video_id, meta["frame_count"], [], backends, EngineConfig())
    return graph, backends


# acceptance criteria report their verdicts here; printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
