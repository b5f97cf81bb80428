from .similarity import SIM_TOLERANCE, cosine_matrix, cosine_similarity, exceeds, quantize_embedding, reaches
from .store import (
    GRAPH_FORMAT_VERSION,
    GraphFormatError,
    dumps_graph,
    load_graph,
    loads_graph,
    recompute_adjacency,
    save_graph,
)
from .types import (
    Action,
    ClipRecord,
    ConfigError,
    EngineConfig,
    Entity,
    ExtractionRecord,
    MemberForm,
    PrototypeEntity,
    VideoGraph,
    entity_merge_text,
)
from .validate import GraphValidationError, check_graph, graph_problems

__all__ = [
    "Action",
    "ClipRecord",
    "ConfigError",
    "EngineConfig",
    "Entity",
    "ExtractionRecord",
    "GRAPH_FORMAT_VERSION",
    "GraphFormatError",
    "GraphValidationError",
    "MemberForm",
    "PrototypeEntity",
    "SIM_TOLERANCE",
    "VideoGraph",
    "check_graph",
    "cosine_matrix",
    "cosine_similarity",
    "dumps_graph",
    "entity_merge_text",
    "exceeds",
    "graph_problems",
    "load_graph",
    "loads_graph",
    "quantize_embedding",
    "reaches",
    "recompute_adjacency",
    "save_graph",
]
