"""Backend contracts: chat completion over text plus clip references, and text embedding."""
from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


class BackendError(RuntimeError):
    """The backend answered, but not with something usable."""


class TransportError(BackendError):
    """The request never got a usable HTTP response; safe to retry."""


@dataclass(frozen=True)
class MediaRef:
    """A clip the model may look at: frame range within one video."""

    video_id: str
    frame_start: int
    frame_end: int
    clip_index: int

    def label(self) -> str:
        return f"{self.video_id} clip {self.clip_index} frames [{self.frame_start}, {self.frame_end})"


@dataclass(frozen=True)
class ChatRequest:
    prompt_text: str
    media_refs: tuple[MediaRef, ...] = ()
    response_format_hint: str = "free_text"
    # pipeline stage issuing the call; backends may use it for routing or accounting
    task: str = "chat"

    def __post_init__(self) -> None:
        if self.response_format_hint not in ("free_text", "json"):
            raise ValueError(f"response_format_hint must be free_text or json, got {self.response_format_hint!r}")
        if len({m.video_id for m in self.media_refs}) > 1:
            raise ValueError("all media_refs of one request must come from the same video")


@dataclass(frozen=True)
class EmbedRequest:
    texts: Sequence[str]
    task: str = "embed"

    def __post_init__(self) -> None:
        if not self.texts:
            raise ValueError("EmbedRequest needs at least one text")
        if any((not isinstance(t, str)) or not t.strip() for t in self.texts):
            raise ValueError("EmbedRequest texts must be non-empty strings")


@dataclass(frozen=True)
class CallRecord:
    capability: str
    task: str
    latency_s: float
    request_size: int
    response_size: int
    ok: bool


@dataclass
class BackendTrace:
    """Thread-safe counters of every backend call.

    ``calls`` keeps one record per call; counters are derived from it, so
    they can only grow.
    """

    calls: list[CallRecord] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, capability: str, task: str, latency_s: float, request_size: int, response_size: int, ok: bool = True) -> None:
        rec = CallRecord(capability, task, latency_s, request_size, response_size, ok)
        with self._lock:
            self.calls.append(rec)

    def count(self, capability: str | None = None, task: str | None = None) -> int:
        with self._lock:
            return sum(
                1
                for c in self.calls
                if (capability is None or c.capability == capability) and (task is None or c.task == task)
            )

    def counts(self) -> dict[str, int]:
        with self._lock:
            return dict(Counter(c.capability for c in self.calls))

    def counts_by_task(self) -> dict[str, int]:
        with self._lock:
            return dict(sorted(Counter(f"{c.capability}:{c.task}" for c in self.calls).items()))

    def total_latency(self) -> float:
        with self._lock:
            return sum(c.latency_s for c in self.calls)

    def snapshot(self) -> int:
        """Number of calls so far; pair with :meth:`since` to meter a span."""
        with self._lock:
            return len(self.calls)

    def since(self, mark: int) -> list[CallRecord]:
        with self._lock:
            return list(self.calls[mark:])


@runtime_checkable
class ChatBackend(Protocol):
    trace: BackendTrace

    def chat(self, req: ChatRequest) -> str: ...


@runtime_checkable
class EmbedBackend(Protocol):
    trace: BackendTrace

    def embed(self, req: EmbedRequest) -> list[np.ndarray]: ...


@dataclass
class Backends:
    chat: ChatBackend
    embed: EmbedBackend

    def call_counts(self) -> dict[str, int]:
        counts = Counter(self.chat.trace.counts_by_task())
        if self.embed.trace is not self.chat.trace:
            counts.update(self.embed.trace.counts_by_task())
        return dict(sorted(counts.items()))
