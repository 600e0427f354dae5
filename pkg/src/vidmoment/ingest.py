"""Ingestion: scene-graph documents in, stores populated, incrementally.

A scene-graph document describes one segment: its frames, the tracked
entities detected in it, and the per-frame SPO triples observed between
them. Ingestion embeds every entity's label (and a representative crop,
or a label-derived placeholder when the source has no crops) and installs
the segment into both stores atomically: a failed ingest leaves both
stores exactly as they were.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .backends.base import EmbeddingBackend, label_placeholder
from .entity_store import DuplicateSegmentError, EntityStore
from .model import EntityRecord, RelationshipRow, VideoSegment
from .relationship_store import RelationshipStore


class SceneGraphError(Exception):
    """A scene-graph document is malformed or violates its invariants."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class Detection:
    """One tracked entity as reported by the upstream scene-graph extractor."""

    eid: int
    label: str
    frame_ids: tuple[int, ...]
    crops: Mapping[int, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SceneGraphDocument:
    segment: VideoSegment
    detections: tuple[Detection, ...]
    triples: tuple[RelationshipRow, ...]


@dataclass(frozen=True)
class IngestStats:
    segments_added: int = 0
    entities_added: int = 0
    relationships_added: int = 0
    embed_text_calls: int = 0
    embed_image_calls: int = 0

    def __add__(self, other: "IngestStats") -> "IngestStats":
        return IngestStats(
            self.segments_added + other.segments_added,
            self.entities_added + other.entities_added,
            self.relationships_added + other.relationships_added,
            self.embed_text_calls + other.embed_text_calls,
            self.embed_image_calls + other.embed_image_calls,
        )

    def to_dict(self) -> dict:
        return {
            "segments_added": self.segments_added,
            "entities_added": self.entities_added,
            "relationships_added": self.relationships_added,
            "embed_text_calls": self.embed_text_calls,
            "embed_image_calls": self.embed_image_calls,
        }


def scene_graph_problems(doc: SceneGraphDocument) -> list[str]:
    """Every invariant violation in the document; empty iff ingestible."""
    problems: list[str] = []
    frames = set(doc.segment.frame_ids)
    by_eid: dict[int, Detection] = {}
    for det in doc.detections:
        if det.eid in by_eid:
            problems.append(f"duplicate detection eid {det.eid}")
            continue
        by_eid[det.eid] = det
        if not det.label:
            problems.append(f"detection {det.eid}: empty label")
        if not det.frame_ids:
            problems.append(f"detection {det.eid}: empty frame_ids")
        elif not set(det.frame_ids) <= frames:
            problems.append(f"detection {det.eid}: frame_ids outside the segment")
        if not set(det.crops) <= set(det.frame_ids):
            problems.append(f"detection {det.eid}: crop for a frame the entity is not in")
    for row in doc.triples:
        if row.vid != doc.segment.vid:
            problems.append(f"triple at frame {row.fid}: vid {row.vid!r} is not the segment's")
        if row.fid not in frames:
            problems.append(f"triple ({row.sid},{row.rl!r},{row.oid}): frame {row.fid} not in segment")
            continue
        for name, eid in (("subject", row.sid), ("object", row.oid)):
            det = by_eid.get(eid)
            if det is None:
                problems.append(
                    f"triple at frame {row.fid}: {name} {eid} has no detection"
                )
            elif row.fid not in det.frame_ids:
                problems.append(
                    f"triple at frame {row.fid}: {name} {eid} does not appear in that frame"
                )
    return problems


# ---------------------------------------------------------------------------
# Document format
# ---------------------------------------------------------------------------


def _parse_detections(raw, problems: list[str]) -> list[Detection]:
    detections = []
    if not isinstance(raw, list):
        problems.append("'detections' must be a list")
        return detections
    for pos, item in enumerate(raw):
        where = f"detections[{pos}]"
        if not isinstance(item, dict):
            problems.append(f"{where} must be an object")
            continue
        try:
            crops = {int(fid): str(loc) for fid, loc in item.get("crops", {}).items()}
            detections.append(
                Detection(
                    eid=int(item["eid"]),
                    label=str(item["label"]),
                    frame_ids=tuple(sorted({int(f) for f in item["frame_ids"]})),
                    crops=crops,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{where}: {exc!r}")
    return detections


def _parse_triples(raw, vid: str, problems: list[str]) -> list[RelationshipRow]:
    rows = []
    if not isinstance(raw, list):
        problems.append("'triples' must be a list")
        return rows
    for pos, item in enumerate(raw):
        where = f"triples[{pos}]"
        if not isinstance(item, dict):
            problems.append(f"{where} must be an object")
            continue
        try:
            rows.append(
                RelationshipRow(
                    vid=vid,
                    fid=int(item["fid"]),
                    sid=int(item["sid"]),
                    rl=str(item["rl"]),
                    oid=int(item["oid"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{where}: {exc}")
    return rows


def parse_scene_graph(text: str) -> SceneGraphDocument:
    """Parse and fully validate one per-segment scene-graph document."""
    problems: list[str] = []
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneGraphError([f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}"])
    if not isinstance(data, dict) or "segment" not in data:
        raise SceneGraphError(["document must be an object with a 'segment' section"])
    seg = data["segment"]
    if not isinstance(seg, dict):
        raise SceneGraphError(["'segment' must be an object"])
    try:
        refs = seg.get("frame_image_refs")
        segment = VideoSegment(
            vid=str(seg["vid"]),
            source_video=str(seg["source_video"]),
            frame_ids=tuple(seg["frame_ids"]),
            fps=float(seg["fps"]),
            frame_image_refs={int(f): str(r) for f, r in refs.items()} if refs else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneGraphError([f"segment: {exc}"])
    detections = _parse_detections(data.get("detections", []), problems)
    triples = _parse_triples(data.get("triples", []), segment.vid, problems)
    if problems:
        raise SceneGraphError(problems)
    doc = SceneGraphDocument(segment, tuple(detections), tuple(triples))
    problems = scene_graph_problems(doc)
    if problems:
        raise SceneGraphError(problems)
    return doc


def scene_graph_to_dict(doc: SceneGraphDocument) -> dict:
    segment = doc.segment
    out: dict = {
        "segment": {
            "vid": segment.vid,
            "source_video": segment.source_video,
            "fps": segment.fps,
            "frame_ids": list(segment.frame_ids),
        },
        "detections": [
            {
                "eid": d.eid,
                "label": d.label,
                "frame_ids": list(d.frame_ids),
                **({"crops": {str(f): loc for f, loc in sorted(d.crops.items())}} if d.crops else {}),
            }
            for d in doc.detections
        ],
        "triples": [
            {"fid": r.fid, "sid": r.sid, "rl": r.rl, "oid": r.oid} for r in doc.triples
        ],
    }
    if segment.frame_image_refs:
        out["segment"]["frame_image_refs"] = {
            str(f): ref for f, ref in sorted(segment.frame_image_refs.items())
        }
    return out


def read_scene_graph_file(path: str | Path) -> SceneGraphDocument:
    return parse_scene_graph(Path(path).read_text(encoding="utf-8"))


def write_scene_graph_file(doc: SceneGraphDocument, path: str | Path):
    Path(path).write_text(json.dumps(scene_graph_to_dict(doc), indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


def segment_frames(
    total_frames: int, segment_length: int, fps: float, source_video: str
) -> list[VideoSegment]:
    """Partition [0, total_frames) into ceil(n/m) ordered, disjoint segments.

    All segments have exactly segment_length frames except possibly the
    last, which carries the remainder.
    """
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1 (zero-frame input)")
    if segment_length < 1:
        raise ValueError("segment_length must be >= 1")
    count = math.ceil(total_frames / segment_length)
    segments = []
    for index in range(count):
        start = index * segment_length
        end = min(start + segment_length, total_frames)
        segments.append(
            VideoSegment(
                vid=f"{source_video}-{index:04d}",
                source_video=source_video,
                frame_ids=tuple(range(start, end)),
                fps=fps,
            )
        )
    return segments


def split_video_document(data: dict, segment_length: int) -> list[SceneGraphDocument]:
    """Split a whole-video scene-graph document into per-segment documents.

    The input carries a 'video' section ({source_video, fps, total_frames})
    instead of 'segment'; detections and triples use global frame ids.
    Entities spanning a segment boundary become one record per segment
    (same eid), matching how per-segment tracking would see them.
    """
    video = data.get("video")
    if not isinstance(video, dict):
        raise SceneGraphError(["whole-video document must have a 'video' section"])
    try:
        source = str(video["source_video"])
        fps = float(video["fps"])
        total = int(video["total_frames"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneGraphError([f"video: {exc}"])
    problems: list[str] = []
    detections = _parse_detections(data.get("detections", []), problems)
    raw_triples = data.get("triples", [])
    if not isinstance(raw_triples, list):
        problems.append("'triples' must be a list")
        raw_triples = []
    for pos, item in enumerate(raw_triples):
        if not isinstance(item, dict) or not isinstance(item.get("fid"), int):
            problems.append(f"triples[{pos}] must be an object with an integer 'fid'")
        elif not 0 <= item["fid"] < total:
            problems.append(f"triples[{pos}]: frame {item['fid']} outside [0, {total})")
    if problems:
        raise SceneGraphError(problems)

    segments = segment_frames(total, segment_length, fps, source)
    refs = data.get("frame_image_refs") or {}
    docs = []
    for segment in segments:
        frames = set(segment.frame_ids)
        seg_refs = {int(f): str(r) for f, r in refs.items() if int(f) in frames}
        if seg_refs:
            segment = VideoSegment(
                segment.vid, segment.source_video, segment.frame_ids, segment.fps, seg_refs
            )
        seg_detections = []
        for det in detections:
            in_seg = tuple(f for f in det.frame_ids if f in frames)
            if not in_seg:
                continue
            seg_detections.append(
                Detection(
                    eid=det.eid,
                    label=det.label,
                    frame_ids=in_seg,
                    crops={f: loc for f, loc in det.crops.items() if f in frames},
                )
            )
        seg_triples = _parse_triples(
            [t for t in raw_triples if t["fid"] in frames], segment.vid, problems
        )
        if problems:
            raise SceneGraphError(problems)
        doc = SceneGraphDocument(segment, tuple(seg_detections), tuple(seg_triples))
        doc_problems = scene_graph_problems(doc)
        if doc_problems:
            raise SceneGraphError([f"{segment.vid}: {p}" for p in doc_problems])
        docs.append(doc)
    return docs


# ---------------------------------------------------------------------------
# Store population
# ---------------------------------------------------------------------------


def _build_records(
    doc: SceneGraphDocument, embedder: EmbeddingBackend
) -> tuple[list[EntityRecord], IngestStats]:
    labels = [det.label for det in doc.detections]
    locators = []
    fallbacks = []
    for det in doc.detections:
        if det.crops:
            # representative crop: the earliest frame that has one
            locators.append(det.crops[min(det.crops)])
            fallbacks.append(False)
        else:
            locators.append(label_placeholder(det.label))
            fallbacks.append(True)
    text_vecs = embedder.embed_texts(labels)
    image_vecs = embedder.embed_images(locators)
    records = [
        EntityRecord(
            vid=doc.segment.vid,
            eid=det.eid,
            label=det.label,
            text_embedding=text_vecs[i],
            image_embedding=image_vecs[i],
            frame_ids=det.frame_ids,
            image_fallback=fallbacks[i],
        )
        for i, det in enumerate(doc.detections)
    ]
    stats = IngestStats(
        entities_added=len(records),
        relationships_added=len(set(doc.triples)),
        embed_text_calls=len(labels),
        embed_image_calls=len(locators),
    )
    return records, stats


def ingest_scene_graph(
    doc: SceneGraphDocument,
    embedder: EmbeddingBackend,
    entity_store: EntityStore,
    relationship_store: RelationshipStore,
) -> IngestStats:
    """Embed and install one new segment; rejects atomically on any failure."""
    problems = scene_graph_problems(doc)
    if problems:
        raise SceneGraphError(problems)
    vid = doc.segment.vid
    if entity_store.has_segment(vid) or relationship_store.has_segment(vid):
        raise DuplicateSegmentError(f"segment {vid!r} already ingested; use upsert_segment")
    records, stats = _build_records(doc, embedder)
    entity_store.add_segment(doc.segment, records)
    try:
        relationship_store.add_segment(vid, doc.triples)
    except Exception:
        entity_store.remove_segment(vid)
        raise
    return IngestStats(segments_added=1) + stats


def upsert_segment(
    doc: SceneGraphDocument,
    embedder: EmbeddingBackend,
    entity_store: EntityStore,
    relationship_store: RelationshipStore,
) -> IngestStats:
    """Insert a new segment, or atomically replace the prior one with this vid.

    Records of other segments are never touched and no embeddings are
    recomputed for them; only the incoming document is embedded.
    """
    vid = doc.segment.vid
    if not (entity_store.has_segment(vid) or relationship_store.has_segment(vid)):
        return ingest_scene_graph(doc, embedder, entity_store, relationship_store)
    problems = scene_graph_problems(doc)
    if problems:
        raise SceneGraphError(problems)
    records, stats = _build_records(doc, embedder)
    old_segment = entity_store.segment(vid)
    old_records = entity_store.records(vid)
    entity_store.replace_segment(doc.segment, records)
    try:
        relationship_store.replace_segment(vid, doc.triples)
    except Exception:
        entity_store.replace_segment(old_segment, old_records)
        raise
    return stats
