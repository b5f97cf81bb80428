from .base import (
    BackendError,
    Backends,
    BackendTrace,
    CallRecord,
    ChatBackend,
    ChatRequest,
    EmbedBackend,
    EmbedRequest,
    MediaRef,
    TransportError,
)
from .http import DEFAULT_EMBED_MODEL, HttpChatBackend, HttpEmbedBackend, HttpSettings
from .mock import (
    MOCK_EMBED_DIM,
    MissingSidecarError,
    MockChatBackend,
    MockEmbedBackend,
    ScriptedChatBackend,
    SidecarStore,
    mock_vector,
)


def mock_backends(sidecars: SidecarStore | None = None) -> Backends:
    """Mock chat + embedding pair sharing one trace."""
    trace = BackendTrace()
    return Backends(
        chat=MockChatBackend(sidecars or SidecarStore(), trace=trace),
        embed=MockEmbedBackend(trace=trace),
    )


__all__ = [
    "BackendError",
    "BackendTrace",
    "Backends",
    "CallRecord",
    "ChatBackend",
    "ChatRequest",
    "DEFAULT_EMBED_MODEL",
    "EmbedBackend",
    "EmbedRequest",
    "HttpChatBackend",
    "HttpEmbedBackend",
    "HttpSettings",
    "MOCK_EMBED_DIM",
    "MediaRef",
    "MissingSidecarError",
    "MockChatBackend",
    "MockEmbedBackend",
    "ScriptedChatBackend",
    "SidecarStore",
    "TransportError",
    "mock_backends",
    "mock_vector",
]
