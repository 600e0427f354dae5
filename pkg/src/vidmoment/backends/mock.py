"""Deterministic mock backends driven by a ground-truth sidecar.

The mock embedder hashes its input into a seeded random unit vector, so
equal strings always embed identically and unrelated strings land nearly
orthogonal. The mock verifier answers from a sidecar file listing, per
(segment, frame), the triple statements that actually hold. Together they
make the whole pipeline a pure function of (seed, stores, sidecar), which
is what lets tests compare it against a brute-force oracle exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from pathlib import Path

import numpy as np

from .base import LABEL_PLACEHOLDER_PREFIX, EmbeddingBackend, VerifierBackend, VerifierRequest

logger = logging.getLogger(__name__)

SIDECAR_FORMAT = "vidmoment-sidecar"
SIDECAR_VERSION = 1


class GroundTruthSidecar:
    """Ground truth that stands in for real vision models in tests.

    image_labels maps a crop locator to the label the "image" shows;
    frame truths map (vid, fid) to the set of triple statements that hold
    in that frame. Registration replaces per-segment entries atomically,
    mirroring the stores' upsert semantics.
    """

    def __init__(self):
        self._image_labels: dict[str, str] = {}
        self._frame_truths: dict[str, dict[int, frozenset[str]]] = {}
        self._lock = threading.Lock()

    def register_image(self, locator: str, label: str):
        with self._lock:
            self._image_labels[locator] = label

    def register_segment_truths(self, vid: str, truths: dict[int, set[str]] | None):
        with self._lock:
            if truths is None:
                self._frame_truths.pop(vid, None)
            else:
                self._frame_truths[vid] = {
                    int(fid): frozenset(stmts) for fid, stmts in truths.items()
                }

    def image_label(self, locator: str) -> str | None:
        return self._image_labels.get(locator)

    def frame_truths(self, vid: str, fid: int) -> frozenset[str]:
        return self._frame_truths.get(vid, {}).get(fid, frozenset())

    def merge(self, other: "GroundTruthSidecar"):
        with other._lock:
            images = dict(other._image_labels)
            frames = {vid: dict(per) for vid, per in other._frame_truths.items()}
        with self._lock:
            self._image_labels.update(images)
            self._frame_truths.update(frames)

    def to_dict(self) -> dict:
        return {
            "format": SIDECAR_FORMAT,
            "version": SIDECAR_VERSION,
            "image_labels": dict(sorted(self._image_labels.items())),
            "frame_truths": {
                vid: {str(fid): sorted(stmts) for fid, stmts in sorted(per.items())}
                for vid, per in sorted(self._frame_truths.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthSidecar":
        if data.get("format") != SIDECAR_FORMAT:
            raise ValueError("not a ground-truth sidecar document")
        sidecar = cls()
        for locator, label in data.get("image_labels", {}).items():
            sidecar.register_image(locator, label)
        for vid, per in data.get("frame_truths", {}).items():
            sidecar.register_segment_truths(vid, {int(f): set(s) for f, s in per.items()})
        return sidecar

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruthSidecar":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class MockEmbedder(EmbeddingBackend):
    """Hash-seeded random unit vectors; a pure function of (seed, input).

    Image locators are resolved to labels through the sidecar (or the
    ``label:`` placeholder scheme) and embedded in the same space as text,
    so a crop labelled "bicycle" matches the query text "bicycle" with
    similarity 1. Unresolvable locators fall back to a vector derived from
    the locator itself, which matches nothing else by construction.
    """

    def __init__(self, dimension: int = 64, seed: int = 0, sidecar: GroundTruthSidecar | None = None):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self._dimension = dimension
        self._seed = seed
        self.sidecar = sidecar if sidecar is not None else GroundTruthSidecar()
        self.calls: list[tuple[str, str]] = []
        self.fallback_count = 0

    @property
    def dimension(self) -> int:
        return self._dimension

    def _vector(self, space: str, content: str) -> np.ndarray:
        digest = hashlib.blake2b(
            f"{self._seed}|{space}|{content}".encode("utf-8"), digest_size=8
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec = rng.standard_normal(self._dimension)
        return vec / np.linalg.norm(vec)

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        self.calls.append(("text", text))
        return self._vector("text", text)

    def embed_image(self, locator: str) -> np.ndarray:
        if not locator:
            raise ValueError("cannot embed empty locator")
        self.calls.append(("image", locator))
        if locator.startswith(LABEL_PLACEHOLDER_PREFIX):
            return self._vector("text", locator[len(LABEL_PLACEHOLDER_PREFIX):])
        label = self.sidecar.image_label(locator)
        if label is not None:
            return self._vector("text", label)
        self.fallback_count += 1
        logger.warning("no sidecar label for image locator %r; using fallback vector", locator)
        return self._vector("opaque", locator)


class MockVerifier(VerifierBackend):
    """Answers 1.0 when the sidecar lists the triple for (vid, fid), else 0.0."""

    def __init__(self, sidecar: GroundTruthSidecar):
        self.sidecar = sidecar
        self.calls: list[VerifierRequest] = []

    def verify_triple(self, request: VerifierRequest) -> float:
        self.calls.append(request)
        truths = self.sidecar.frame_truths(request.vid, request.fid)
        return 1.0 if request.triple_text in truths else 0.0
