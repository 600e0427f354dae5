from .base import (
    BackendError,
    EmbeddingBackend,
    EmbeddingBackendDescriptor,
    VerifierBackend,
    VerifierRequest,
    LABEL_PLACEHOLDER_PREFIX,
    label_placeholder,
)
from .mock import GroundTruthSidecar, MockEmbedder, MockVerifier
from .remote import RemoteBackendError, RemoteEmbedder, RemoteVerifier

__all__ = [
    "BackendError",
    "EmbeddingBackend",
    "EmbeddingBackendDescriptor",
    "VerifierBackend",
    "VerifierRequest",
    "LABEL_PLACEHOLDER_PREFIX",
    "label_placeholder",
    "GroundTruthSidecar",
    "MockEmbedder",
    "MockVerifier",
    "RemoteBackendError",
    "RemoteEmbedder",
    "RemoteVerifier",
]
