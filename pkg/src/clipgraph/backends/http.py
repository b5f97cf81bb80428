"""Chat-completion and embedding clients for OpenAI-compatible HTTP servers."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Any

import numpy as np
import requests

from .base import BackendError, BackendTrace, ChatRequest, EmbedRequest, TransportError

logger = logging.getLogger(__name__)

DEFAULT_EMBED_MODEL = "BAAI/bge-large-en-v1.5"
DEFAULT_API_KEY_ENV = "CLIPGRAPH_API_KEY"
RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class HttpSettings:
    base_url: str
    model: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout_s: float = 120.0
    attempts: int = 3
    backoff_s: float = 0.5
    # e.g. "file:///videos/{video_id}.mp4#t={start_s},{end_s}"; None sends frame ranges as text only
    media_url_template: str | None = None
    sample_fps: float = 1.0

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)


class _HttpClient:
    def __init__(self, settings: HttpSettings, trace: BackendTrace | None, session: requests.Session | None) -> None:
        self.settings = settings
        self.trace = trace or BackendTrace()
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self.settings.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        """POST with retries on transport errors, 429 and 5xx."""
        url = self.settings.base_url.rstrip("/") + path
        last: Exception | None = None
        for attempt in range(self.settings.attempts):
            if attempt:
                time.sleep(self.settings.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self._session.post(url, json=payload, headers=self._headers(), timeout=self.settings.timeout_s)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = TransportError(f"POST {url} failed: {exc}")
                logger.warning("attempt %d/%d: %s", attempt + 1, self.settings.attempts, last)
                continue
            if resp.status_code in RETRY_STATUSES:
                last = TransportError(f"POST {url} returned HTTP {resp.status_code}: {resp.text[:300]}")
                logger.warning("attempt %d/%d: %s", attempt + 1, self.settings.attempts, last)
                continue
            if not 200 <= resp.status_code < 300:
                raise BackendError(f"POST {url} returned HTTP {resp.status_code}: {resp.text[:300]}")
            try:
                data = resp.json()
            except ValueError as exc:
                raise BackendError(f"POST {url} returned non-JSON body: {resp.text[:300]}") from exc
            if not isinstance(data, dict):
                raise BackendError(f"POST {url} returned unexpected payload: {resp.text[:300]}")
            return data
        assert last is not None
        raise last


class HttpChatBackend(_HttpClient):
    def __init__(self, settings: HttpSettings, trace: BackendTrace | None = None, session: requests.Session | None = None) -> None:
        super().__init__(settings, trace, session)

    def build_payload(self, req: ChatRequest) -> dict[str, Any]:
        text = req.prompt_text
        if req.media_refs:
            listing = "\n".join(f"[Video clip] {m.label()}" for m in req.media_refs)
            text = f"{listing}\n\n{text}"
        content: str | list[dict[str, Any]] = text
        template = self.settings.media_url_template
        if template and req.media_refs:
            fps = self.settings.sample_fps
            parts: list[dict[str, Any]] = [{"type": "text", "text": text}]
            for m in req.media_refs:
                url = template.format(
                    video_id=m.video_id,
                    frame_start=m.frame_start,
                    frame_end=m.frame_end,
                    start_s=m.frame_start / fps,
                    end_s=m.frame_end / fps,
                )
                parts.append({"type": "video_url", "video_url": {"url": url}})
            content = parts
        payload: dict[str, Any] = {"model": self.settings.model, "messages": [{"role": "user", "content": content}]}
        if req.response_format_hint == "json":
            payload["response_format"] = {"type": "json_object"}
        return payload

    def chat(self, req: ChatRequest) -> str:
        start = time.perf_counter()
        payload = self.build_payload(req)
        text = ""
        ok = False
        try:
            data = self._post("/chat/completions", payload)
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed chat response: {str(data)[:300]}") from exc
            if not isinstance(text, str):
                raise BackendError(f"malformed chat response content: {str(data)[:300]}")
            ok = True
            return text
        finally:
            self.trace.record("chat", req.task, time.perf_counter() - start, len(req.prompt_text), len(text), ok)


class HttpEmbedBackend(_HttpClient):
    def __init__(self, settings: HttpSettings, trace: BackendTrace | None = None, session: requests.Session | None = None) -> None:
        super().__init__(settings, trace, session)
        self._dim: int | None = None

    def embed(self, req: EmbedRequest) -> list[np.ndarray]:
        start = time.perf_counter()
        ok = False
        out: list[np.ndarray] = []
        try:
            data = self._post("/embeddings", {"model": self.settings.model, "input": list(req.texts)})
            try:
                items = sorted(data["data"], key=lambda d: d.get("index", 0))
                out = [np.asarray(item["embedding"], dtype=np.float64) for item in items]
            except (KeyError, TypeError, ValueError) as exc:
                raise BackendError(f"malformed embedding response: {str(data)[:300]}") from exc
            if len(out) != len(req.texts):
                raise BackendError(f"embedding response has {len(out)} vectors for {len(req.texts)} inputs")
            dims = {v.shape for v in out}
            if len(dims) != 1 or len(next(iter(dims))) != 1:
                raise BackendError("embedding response vectors have inconsistent shapes")
            dim = out[0].shape[0]
            if self._dim is not None and dim != self._dim:
                raise BackendError(f"embedding dimension changed from {self._dim} to {dim}")
            self._dim = dim
            ok = True
            return out
        finally:
            self.trace.record(
                "embed", req.task, time.perf_counter() - start, sum(len(t) for t in req.texts), sum(v.size * 8 for v in out), ok
            )
