"""Dataset packaging: archive loading, on-disk layout, descriptors.

A dataset directory holds the two store files, the descriptor, and (when
the corpus shipped one) the ground-truth sidecar:

    <data_dir>/<dataset_id>/
        meta.json            descriptor
        entities.json        entity table (vectors + segment metadata)
        relationships.json   relationship table
        sidecar.json         ground truth for mock backends (optional)
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .backends import GroundTruthSidecar
from .backends.base import EmbeddingBackend
from .entity_store import EntityStore
from .ingest import (
    IngestStats,
    SceneGraphDocument,
    SceneGraphError,
    ingest_scene_graph,
    parse_scene_graph,
    split_video_document,
)
from .relationship_store import RelationshipStore

META_FILE = "meta.json"
ENTITY_FILE = "entities.json"
RELATIONSHIP_FILE = "relationships.json"
SIDECAR_FILE = "sidecar.json"


class DatasetError(Exception):
    pass


class ArchiveError(DatasetError):
    """The archive was rejected; carries diagnostics per offending file."""

    def __init__(self, file_errors: dict[str, list[str]]):
        summary = "; ".join(f"{name}: {msgs[0]}" for name, msgs in sorted(file_errors.items()))
        super().__init__(f"invalid archive: {summary}")
        self.file_errors = file_errors


@dataclass(frozen=True)
class DatasetDescriptor:
    dataset_id: str
    name: str
    segment_count: int
    entity_count: int
    relationship_count: int
    preprocessed_path: str
    raw_path: str

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "name": self.name,
            "segment_count": self.segment_count,
            "entity_count": self.entity_count,
            "relationship_count": self.relationship_count,
            "paths": {"preprocessed": self.preprocessed_path, "raw": self.raw_path},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetDescriptor":
        return cls(
            dataset_id=data["dataset_id"],
            name=data["name"],
            segment_count=data["segment_count"],
            entity_count=data["entity_count"],
            relationship_count=data["relationship_count"],
            preprocessed_path=data["paths"]["preprocessed"],
            raw_path=data["paths"]["raw"],
        )


@dataclass
class Dataset:
    descriptor: DatasetDescriptor
    entity_store: EntityStore
    relationship_store: RelationshipStore
    sidecar: GroundTruthSidecar | None = None

    @property
    def dataset_id(self) -> str:
        return self.descriptor.dataset_id

    def refresh_descriptor(self) -> DatasetDescriptor:
        self.descriptor = DatasetDescriptor(
            dataset_id=self.descriptor.dataset_id,
            name=self.descriptor.name,
            segment_count=self.entity_store.segment_count,
            entity_count=len(self.entity_store),
            relationship_count=len(self.relationship_store),
            preprocessed_path=self.descriptor.preprocessed_path,
            raw_path=self.descriptor.raw_path,
        )
        return self.descriptor


def slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")
    if not slug:
        raise DatasetError(f"cannot derive a dataset id from {name!r}")
    return slug


def load_archive(
    source_dir: str | Path, segment_length: int | None = None
) -> tuple[list[SceneGraphDocument], GroundTruthSidecar | None]:
    """Read every scene-graph document in a corpus directory.

    Per-segment files are used as-is; whole-video files (a 'video' section
    instead of 'segment') are partitioned into segments of segment_length
    frames. Any invalid file rejects the whole archive, with diagnostics
    collected per file.
    """
    source = Path(source_dir)
    if not source.is_dir():
        raise DatasetError(f"archive directory not found: {source}")
    file_errors: dict[str, list[str]] = {}
    docs: list[SceneGraphDocument] = []
    sidecar: GroundTruthSidecar | None = None
    seen_vids: dict[str, str] = {}

    for path in sorted(source.glob("*.json")):
        if path.name == SIDECAR_FILE:
            try:
                sidecar = GroundTruthSidecar.load(path)
            except (ValueError, json.JSONDecodeError) as exc:
                file_errors[path.name] = [str(exc)]
            continue
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            file_errors[path.name] = [f"syntax error: {exc}"]
            continue
        try:
            if isinstance(raw, dict) and "video" in raw:
                if segment_length is None:
                    raise SceneGraphError(
                        ["whole-video document requires a segment length to partition"]
                    )
                parsed = split_video_document(raw, segment_length)
            else:
                parsed = [parse_scene_graph(path.read_text(encoding="utf-8"))]
        except SceneGraphError as exc:
            file_errors[path.name] = exc.problems
            continue
        for doc in parsed:
            vid = doc.segment.vid
            if vid in seen_vids:
                file_errors.setdefault(path.name, []).append(
                    f"segment {vid!r} already defined in {seen_vids[vid]}"
                )
                continue
            seen_vids[vid] = path.name
            docs.append(doc)

    if file_errors:
        raise ArchiveError(file_errors)
    if not docs:
        raise DatasetError(f"archive {source} contains no scene-graph documents")
    return docs, sidecar


def create_dataset(
    data_dir: str | Path,
    dataset_id: str,
    name: str,
    docs: list[SceneGraphDocument],
    embedder: EmbeddingBackend,
    raw_path: str = "",
    sidecar: GroundTruthSidecar | None = None,
    workers: int = 1,
) -> tuple[Dataset, IngestStats]:
    """Ingest all documents (segments in parallel) and persist the dataset."""
    target = Path(data_dir) / dataset_id
    if target.exists():
        raise DatasetError(f"dataset {dataset_id!r} already exists at {target}")
    entity_store = EntityStore(dimension=embedder.dimension)
    relationship_store = RelationshipStore()

    def ingest(doc: SceneGraphDocument) -> IngestStats:
        return ingest_scene_graph(doc, embedder, entity_store, relationship_store)

    if workers > 1 and len(docs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            stats_list = list(executor.map(ingest, docs))
    else:
        stats_list = [ingest(doc) for doc in docs]
    total = IngestStats()
    for stats in stats_list:
        total = total + stats

    descriptor = DatasetDescriptor(
        dataset_id=dataset_id,
        name=name,
        segment_count=entity_store.segment_count,
        entity_count=len(entity_store),
        relationship_count=len(relationship_store),
        preprocessed_path=str(target),
        raw_path=raw_path,
    )
    dataset = Dataset(descriptor, entity_store, relationship_store, sidecar)
    save_dataset(dataset, data_dir)
    return dataset, total


def save_dataset(dataset: Dataset, data_dir: str | Path):
    target = Path(data_dir) / dataset.dataset_id
    target.mkdir(parents=True, exist_ok=True)
    dataset.refresh_descriptor()
    dataset.entity_store.save(target / ENTITY_FILE)
    dataset.relationship_store.save(target / RELATIONSHIP_FILE)
    if dataset.sidecar is not None:
        dataset.sidecar.save(target / SIDECAR_FILE)
    (target / META_FILE).write_text(
        json.dumps(dataset.descriptor.to_dict(), indent=2), encoding="utf-8"
    )


def load_dataset(data_dir: str | Path, dataset_id: str) -> Dataset:
    target = Path(data_dir) / dataset_id
    if not (target / META_FILE).is_file():
        raise DatasetError(f"unknown dataset {dataset_id!r}")
    descriptor = DatasetDescriptor.from_dict(
        json.loads((target / META_FILE).read_text(encoding="utf-8"))
    )
    entity_store = EntityStore.load(target / ENTITY_FILE)
    relationship_store = RelationshipStore.load(target / RELATIONSHIP_FILE)
    sidecar = None
    if (target / SIDECAR_FILE).is_file():
        sidecar = GroundTruthSidecar.load(target / SIDECAR_FILE)
    return Dataset(descriptor, entity_store, relationship_store, sidecar)


def list_descriptors(data_dir: str | Path) -> list[DatasetDescriptor]:
    root = Path(data_dir)
    if not root.is_dir():
        return []
    out = []
    for meta in sorted(root.glob(f"*/{META_FILE}")):
        out.append(DatasetDescriptor.from_dict(json.loads(meta.read_text(encoding="utf-8"))))
    return out
