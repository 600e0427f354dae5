"""Backend contracts for embedding and relationship verification.

The pipeline never runs vision or language models itself; it talks to a
backend implementing these interfaces. Two implementations ship with the
package: a deterministic mock driven by a ground-truth sidecar (tests,
offline evaluation) and a remote HTTP client for real model services.

Image locator convention: locators are opaque to the pipeline and passed
through to the backend. The single exception is the reserved scheme
``label:<text>``, used as a deterministic placeholder when an entity has
no crop; backends must embed it as if it were the text after the prefix.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

LABEL_PLACEHOLDER_PREFIX = "label:"


def label_placeholder(label: str) -> str:
    """Deterministic image locator for entities without a crop."""
    return LABEL_PLACEHOLDER_PREFIX + label


class BackendError(Exception):
    """A backend call failed after exhausting any retries."""


@dataclass(frozen=True)
class EmbeddingBackendDescriptor:
    name: str
    dimension: int
    modality: str  # "text" | "image"

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("embedding dimension must be positive")
        if self.modality not in ("text", "image"):
            raise ValueError(f"unknown modality {self.modality!r}")


@dataclass(frozen=True)
class VerifierRequest:
    """One relationship check against one frame image."""

    frame_ref: str
    triple_text: str
    vid: str
    fid: int

    def __post_init__(self):
        if not self.triple_text:
            raise ValueError("triple_text must be non-empty")


class EmbeddingBackend(ABC):
    """Maps text and image locators to fixed-dimension unit-norm vectors.

    Implementations must be deterministic per instance and safe for
    concurrent calls. Batch methods exist so remote implementations can
    collapse many inputs into one request; the defaults just loop.
    """

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def embed_text(self, text: str) -> np.ndarray: ...

    @abstractmethod
    def embed_image(self, locator: str) -> np.ndarray: ...

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return [self.embed_text(t) for t in texts]

    def embed_images(self, locators: list[str]) -> list[np.ndarray]:
        return [self.embed_image(loc) for loc in locators]

    def descriptor(self, modality: str) -> EmbeddingBackendDescriptor:
        return EmbeddingBackendDescriptor(type(self).__name__, self.dimension, modality)


class VerifierBackend(ABC):
    """Confirms whether a stated relationship is visible in a frame."""

    @abstractmethod
    def verify_triple(self, request: VerifierRequest) -> float:
        """Return a confidence in [0, 1] that the triple holds in the frame."""

    def verify_batch(self, requests: list[VerifierRequest]) -> list[float]:
        """Confidences in request order."""
        return [self.verify_triple(r) for r in requests]
