"""Graph-based retrieval and structured reasoning for long-video question answering."""
from .backends import Backends, mock_backends
from .builder import build_graph
from .core import EngineConfig, VideoGraph, load_graph, save_graph
from .generation import AnswerTrace, answer_question

__version__ = "0.1.0"

__all__ = [
    "AnswerTrace",
    "Backends",
    "EngineConfig",
    "VideoGraph",
    "answer_question",
    "build_graph",
    "load_graph",
    "mock_backends",
    "save_graph",
]
