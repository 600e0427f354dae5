"""Entity store: tracked entities with text/image vectors plus similarity search.

Search is an exhaustive scan over the stored vectors. That is the required
semantics, not an optimization shortcut: results must match a full scan
exactly, and at the store sizes this system targets (per-segment scene
graphs) a scan is also the fastest honest answer.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .backends.base import EmbeddingBackend
from .model import EntityRecord, HyperParams, VideoSegment, canonical_json

FORMAT_NAME = "vidmoment-entity-table"
FORMAT_VERSION = 1


class StoreError(Exception):
    pass


class DuplicateSegmentError(StoreError):
    pass


@dataclass(frozen=True)
class EntityMatch:
    """One candidate entity for a query description."""

    vid: str
    eid: int
    text_score: float
    image_score: float

    @property
    def combined_score(self) -> float:
        return max(self.text_score, self.image_score)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity undefined for zero vector")
    return float(np.dot(a, b)) / (norm_a * norm_b)


class EntityStore:
    """Holds EntityRecords per segment and answers vector similarity searches.

    Writers replace whole segments under the store lock; readers work on
    immutable per-segment tuples, so concurrent searches never observe a
    half-written segment.
    """

    def __init__(self, dimension: int | None = None):
        self._dimension = dimension
        self._segments: dict[str, VideoSegment] = {}
        self._records: dict[str, tuple[EntityRecord, ...]] = {}
        self._lock = threading.RLock()

    @property
    def dimension(self) -> int | None:
        return self._dimension

    def __len__(self) -> int:
        return sum(len(recs) for recs in self._records.values())

    @property
    def segment_count(self) -> int:
        return len(self._segments)

    def vids(self) -> list[str]:
        return sorted(self._segments)

    def has_segment(self, vid: str) -> bool:
        return vid in self._segments

    def segment(self, vid: str) -> VideoSegment:
        try:
            return self._segments[vid]
        except KeyError:
            raise StoreError(f"unknown segment {vid!r}") from None

    def records(self, vid: str) -> tuple[EntityRecord, ...]:
        try:
            return self._records[vid]
        except KeyError:
            raise StoreError(f"unknown segment {vid!r}") from None

    def get(self, vid: str, eid: int) -> EntityRecord:
        for record in self.records(vid):
            if record.eid == eid:
                return record
        raise StoreError(f"unknown entity ({vid!r}, {eid})")

    def iter_records(self) -> Iterator[EntityRecord]:
        """All records in (vid, eid) order."""
        for vid in self.vids():
            yield from self._records[vid]

    def _check_segment(self, segment: VideoSegment, records: Iterable[EntityRecord]):
        records = list(records)
        frames = set(segment.frame_ids)
        seen_eids: set[int] = set()
        for record in records:
            if record.vid != segment.vid:
                raise StoreError(f"record vid {record.vid!r} does not match segment {segment.vid!r}")
            if record.eid in seen_eids:
                raise StoreError(f"duplicate eid {record.eid} in segment {segment.vid!r}")
            seen_eids.add(record.eid)
            if not set(record.frame_ids) <= frames:
                raise StoreError(
                    f"entity ({segment.vid!r},{record.eid}) appears outside the segment's frames"
                )
            for vec in (record.text_embedding, record.image_embedding):
                if self._dimension is not None and vec.shape != (self._dimension,):
                    raise StoreError(
                        f"embedding dimension {vec.shape[0]} does not match store "
                        f"dimension {self._dimension}"
                    )
        for other in self._segments.values():
            if other.vid == segment.vid:
                continue
            if other.source_video == segment.source_video:
                lo, hi = segment.frame_range
                olo, ohi = other.frame_range
                if lo <= ohi and olo <= hi:
                    raise StoreError(
                        f"segment {segment.vid!r} overlaps {other.vid!r} "
                        f"in source {segment.source_video!r}"
                    )
        return tuple(sorted(records, key=lambda r: r.eid))

    def add_segment(self, segment: VideoSegment, records: Iterable[EntityRecord]):
        with self._lock:
            if segment.vid in self._segments:
                raise DuplicateSegmentError(f"segment {segment.vid!r} already present")
            ordered = self._check_segment(segment, records)
            if self._dimension is None and ordered:
                self._dimension = ordered[0].text_embedding.shape[0]
            self._segments[segment.vid] = segment
            self._records[segment.vid] = ordered

    def replace_segment(self, segment: VideoSegment, records: Iterable[EntityRecord]):
        with self._lock:
            ordered = self._check_segment(segment, records)
            if self._dimension is None and ordered:
                self._dimension = ordered[0].text_embedding.shape[0]
            self._segments[segment.vid] = segment
            self._records[segment.vid] = ordered

    def remove_segment(self, vid: str):
        with self._lock:
            self._segments.pop(vid, None)
            self._records.pop(vid, None)

    # -- search ------------------------------------------------------------

    def search(
        self, query_text: str, embedder: EmbeddingBackend, params: HyperParams
    ) -> list[EntityMatch]:
        """All records whose text or image similarity clears its threshold.

        The query text is embedded once and compared against both stored
        vectors of every record. Thresholds are relaxed by the temperature;
        results are sorted by combined score (descending), ties broken by
        (vid, eid). Top-k truncation happens on final results, never here.
        """
        query = np.asarray(embedder.embed_text(query_text), dtype=np.float64)
        query_norm = float(np.linalg.norm(query))
        if query_norm == 0.0:
            raise StoreError("embedder returned a zero query vector")
        text_cut = params.effective_text_threshold()
        image_cut = params.effective_image_threshold()

        matches: list[EntityMatch] = []
        with self._lock:
            snapshot = [(vid, self._records[vid]) for vid in sorted(self._records)]
        for vid, records in snapshot:
            for record in records:
                text_score = float(np.dot(record.text_embedding, query)) / (
                    float(np.linalg.norm(record.text_embedding)) * query_norm
                )
                image_score = float(np.dot(record.image_embedding, query)) / (
                    float(np.linalg.norm(record.image_embedding)) * query_norm
                )
                if text_score >= text_cut or image_score >= image_cut:
                    matches.append(EntityMatch(vid, record.eid, text_score, image_score))
        matches.sort(key=lambda m: (-m.combined_score, m.vid, m.eid))
        return matches

    # -- persistence ---------------------------------------------------------

    def _segment_payload(self, vid: str) -> dict:
        segment = self._segments[vid]
        refs = segment.frame_image_refs
        return {
            "segment": {
                "vid": segment.vid,
                "source_video": segment.source_video,
                "fps": segment.fps,
                "frame_ids": list(segment.frame_ids),
                "frame_image_refs": (
                    {str(fid): ref for fid, ref in sorted(refs.items())} if refs else None
                ),
            },
            "records": [
                {
                    "eid": r.eid,
                    "label": r.label,
                    "text_embedding": [float(x) for x in r.text_embedding],
                    "image_embedding": [float(x) for x in r.image_embedding],
                    "frame_ids": list(r.frame_ids),
                    "image_fallback": r.image_fallback,
                }
                for r in self._records[vid]
            ],
        }

    def serialize_segment(self, vid: str) -> bytes:
        """Canonical bytes for one segment's metadata and records."""
        with self._lock:
            if vid not in self._segments:
                raise StoreError(f"unknown segment {vid!r}")
            return canonical_json(self._segment_payload(vid)).encode("utf-8")

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "dimension": self._dimension,
                "segments": {vid: self._segment_payload(vid) for vid in sorted(self._segments)},
            }

    def save(self, path: str | Path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(canonical_json(self.to_dict()), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def from_dict(cls, data: dict) -> "EntityStore":
        if data.get("format") != FORMAT_NAME:
            raise StoreError("not an entity table file")
        if data.get("version") != FORMAT_VERSION:
            raise StoreError(f"unsupported entity table version {data.get('version')!r}")
        store = cls(dimension=data.get("dimension"))
        for vid, payload in data.get("segments", {}).items():
            seg = payload["segment"]
            refs = seg.get("frame_image_refs")
            segment = VideoSegment(
                vid=seg["vid"],
                source_video=seg["source_video"],
                frame_ids=tuple(seg["frame_ids"]),
                fps=float(seg["fps"]),
                frame_image_refs=(
                    {int(fid): ref for fid, ref in refs.items()} if refs else None
                ),
            )
            records = [
                EntityRecord(
                    vid=vid,
                    eid=item["eid"],
                    label=item["label"],
                    text_embedding=np.asarray(item["text_embedding"], dtype=np.float64),
                    image_embedding=np.asarray(item["image_embedding"], dtype=np.float64),
                    frame_ids=tuple(item["frame_ids"]),
                    image_fallback=item.get("image_fallback", False),
                )
                for item in payload["records"]
            ]
            store.add_segment(segment, records)
        return store

    @classmethod
    def load(cls, path: str | Path) -> "EntityStore":
        import json

        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
