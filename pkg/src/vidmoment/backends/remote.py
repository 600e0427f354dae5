"""HTTP clients for remote embedding and verification services.

Wire protocol:
  POST <embed_url>   {"modality": "text"|"image", "inputs": [str, ...]}
                     -> {"vectors": [[float, ...], ...]}
  POST <verify_url>  {"frames": [{"locator": str, "triple_text": str}, ...]}
                     -> {"confidences": [float, ...]}

Responses are positional: vectors[i] / confidences[i] answer inputs[i].
Calls are idempotent, so failed requests are retried with bounded
exponential backoff before surfacing a RemoteBackendError. A semaphore
caps the number of in-flight requests per client instance.
"""

from __future__ import annotations

import threading
import time

import httpx
import numpy as np

from .base import BackendError, EmbeddingBackend, VerifierBackend, VerifierRequest

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_MAX_RETRIES = 3
DEFAULT_BACKOFF_S = 0.25
DEFAULT_CONCURRENCY_CAP = 8


class RemoteBackendError(BackendError):
    pass


class _RemoteClient:
    def __init__(
        self,
        url: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_s: float = DEFAULT_BACKOFF_S,
        concurrency_cap: int = DEFAULT_CONCURRENCY_CAP,
        transport: httpx.BaseTransport | None = None,
    ):
        self._url = url
        self._max_retries = max_retries
        self._backoff_s = backoff_s
        self._semaphore = threading.Semaphore(concurrency_cap)
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def close(self):
        self._client.close()

    def post(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self._max_retries + 1):
            if attempt:
                # bounded exponential backoff: backoff * 2^(attempt-1), capped
                time.sleep(min(self._backoff_s * (2 ** (attempt - 1)), 10.0))
            try:
                with self._semaphore:
                    response = self._client.post(self._url, json=payload)
                if response.status_code >= 500:
                    last_error = RemoteBackendError(
                        f"{self._url} returned {response.status_code}"
                    )
                    continue
                response.raise_for_status()
                return response.json()
            except httpx.TransportError as exc:
                last_error = exc
            except (httpx.HTTPStatusError, ValueError) as exc:
                # 4xx and malformed JSON are not retriable
                raise RemoteBackendError(f"{self._url}: {exc}") from exc
        raise RemoteBackendError(
            f"{self._url}: giving up after {self._max_retries + 1} attempts: {last_error}"
        ) from last_error


class RemoteEmbedder(EmbeddingBackend):
    def __init__(
        self,
        embed_url: str,
        dimension: int,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_s: float = DEFAULT_BACKOFF_S,
        concurrency_cap: int = DEFAULT_CONCURRENCY_CAP,
        transport: httpx.BaseTransport | None = None,
    ):
        self._dimension = dimension
        self._client = _RemoteClient(
            embed_url, timeout_s, max_retries, backoff_s, concurrency_cap, transport
        )

    @property
    def dimension(self) -> int:
        return self._dimension

    def close(self):
        self._client.close()

    def _embed(self, modality: str, inputs: list[str]) -> list[np.ndarray]:
        if not inputs:
            return []
        if any(not item for item in inputs):
            raise ValueError("cannot embed empty input")
        data = self._client.post({"modality": modality, "inputs": inputs})
        vectors = data.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(inputs):
            raise RemoteBackendError(
                f"embed service returned {0 if not isinstance(vectors, list) else len(vectors)} "
                f"vectors for {len(inputs)} inputs"
            )
        out = []
        for vec in vectors:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self._dimension,):
                raise RemoteBackendError(
                    f"embed service returned shape {arr.shape}, expected ({self._dimension},)"
                )
            out.append(arr)
        return out

    def embed_text(self, text: str) -> np.ndarray:
        return self._embed("text", [text])[0]

    def embed_image(self, locator: str) -> np.ndarray:
        return self._embed("image", [locator])[0]

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return self._embed("text", texts)

    def embed_images(self, locators: list[str]) -> list[np.ndarray]:
        return self._embed("image", locators)


class RemoteVerifier(VerifierBackend):
    def __init__(
        self,
        verify_url: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_s: float = DEFAULT_BACKOFF_S,
        concurrency_cap: int = DEFAULT_CONCURRENCY_CAP,
        transport: httpx.BaseTransport | None = None,
    ):
        self._client = _RemoteClient(
            verify_url, timeout_s, max_retries, backoff_s, concurrency_cap, transport
        )

    def close(self):
        self._client.close()

    def verify_batch(self, requests: list[VerifierRequest]) -> list[float]:
        if not requests:
            return []
        data = self._client.post(
            {
                "frames": [
                    {"locator": r.frame_ref, "triple_text": r.triple_text} for r in requests
                ]
            }
        )
        confidences = data.get("confidences")
        if not isinstance(confidences, list) or len(confidences) != len(requests):
            raise RemoteBackendError(
                "verify service response does not match request count"
            )
        out = []
        for value in confidences:
            conf = float(value)
            if not 0.0 <= conf <= 1.0:
                raise RemoteBackendError(f"verifier confidence {conf} outside [0, 1]")
            out.append(conf)
        return out

    def verify_triple(self, request: VerifierRequest) -> float:
        return self.verify_batch([request])[0]
