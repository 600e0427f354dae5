"""Relationship store: per-frame SPO rows with subject/object indexes.

Candidate retrieval and the triple join implement plain relational
semantics (selection, then an intersection join on the shared row). The
hash indexes on (vid, sid) and (vid, oid) never change results, only how
fast the selection runs; tests hold the store to a full-scan oracle.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .backends.base import EmbeddingBackend
from .entity_store import EntityMatch, cosine_similarity
from .model import HyperParams, RelationshipRow, canonical_json, effective_threshold

FORMAT_NAME = "vidmoment-relationship-table"
FORMAT_VERSION = 1

ROLES = ("subject", "object", "either")


class RelationshipStoreError(Exception):
    pass


@dataclass(frozen=True)
class CandidatePair:
    """A stored row connecting one subject candidate and one object candidate."""

    vid: str
    fid: int
    sid: int
    oid: int
    rl: str
    subject_match: EntityMatch | None = None
    object_match: EntityMatch | None = None

    @property
    def sort_key(self) -> tuple:
        # rl last: a total order even when one (sid, oid) pair was observed
        # under several labels in the same frame
        return (self.vid, self.fid, self.sid, self.oid, self.rl)


class RelationshipStore:
    """Holds RelationshipRows keyed by segment, with secondary indexes."""

    def __init__(self):
        self._rows: dict[str, tuple[RelationshipRow, ...]] = {}
        self._by_subject: dict[tuple[str, int], tuple[RelationshipRow, ...]] = {}
        self._by_object: dict[tuple[str, int], tuple[RelationshipRow, ...]] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return sum(len(rows) for rows in self._rows.values())

    def vids(self) -> list[str]:
        return sorted(self._rows)

    def has_segment(self, vid: str) -> bool:
        return vid in self._rows

    def rows(self, vid: str) -> tuple[RelationshipRow, ...]:
        return self._rows.get(vid, ())

    def iter_rows(self) -> Iterator[RelationshipRow]:
        for vid in self.vids():
            yield from self._rows[vid]

    def _index_segment(self, vid: str, rows: tuple[RelationshipRow, ...]):
        by_subject: dict[tuple[str, int], list[RelationshipRow]] = {}
        by_object: dict[tuple[str, int], list[RelationshipRow]] = {}
        for row in rows:
            by_subject.setdefault((vid, row.sid), []).append(row)
            by_object.setdefault((vid, row.oid), []).append(row)
        for key, bucket in by_subject.items():
            self._by_subject[key] = tuple(bucket)
        for key, bucket in by_object.items():
            self._by_object[key] = tuple(bucket)

    def _drop_index(self, vid: str):
        for index in (self._by_subject, self._by_object):
            for key in [k for k in index if k[0] == vid]:
                del index[key]

    def add_segment(self, vid: str, rows: Iterable[RelationshipRow]):
        with self._lock:
            if vid in self._rows:
                raise RelationshipStoreError(f"segment {vid!r} already present")
            self._install(vid, rows)

    def replace_segment(self, vid: str, rows: Iterable[RelationshipRow]):
        with self._lock:
            self._drop_index(vid)
            self._install(vid, rows)

    def _install(self, vid: str, rows: Iterable[RelationshipRow]):
        unique = sorted(set(rows))
        for row in unique:
            if row.vid != vid:
                raise RelationshipStoreError(
                    f"row vid {row.vid!r} does not match segment {vid!r}"
                )
        ordered = tuple(unique)
        self._rows[vid] = ordered
        self._index_segment(vid, ordered)

    def remove_segment(self, vid: str):
        with self._lock:
            self._drop_index(vid)
            self._rows.pop(vid, None)

    # -- retrieval -----------------------------------------------------------

    def candidate_frames(
        self, matches: Iterable[EntityMatch], role: str = "either"
    ) -> list[RelationshipRow]:
        """Rows whose subject and/or object id is among the matched entities.

        role selects which side must match: "subject", "object", or
        "either". Output is sorted by (vid, fid, sid, rl, oid) and free of
        duplicates.
        """
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {role!r}")
        found: set[RelationshipRow] = set()
        with self._lock:
            for match in matches:
                key = (match.vid, match.eid)
                if role in ("subject", "either"):
                    found.update(self._by_subject.get(key, ()))
                if role in ("object", "either"):
                    found.update(self._by_object.get(key, ()))
        return sorted(found)

    # -- persistence ---------------------------------------------------------

    def _segment_payload(self, vid: str) -> dict:
        return {
            "rows": [
                {"fid": r.fid, "sid": r.sid, "rl": r.rl, "oid": r.oid}
                for r in self._rows[vid]
            ]
        }

    def serialize_segment(self, vid: str) -> bytes:
        with self._lock:
            if vid not in self._rows:
                raise RelationshipStoreError(f"unknown segment {vid!r}")
            return canonical_json(self._segment_payload(vid)).encode("utf-8")

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "segments": {vid: self._segment_payload(vid) for vid in sorted(self._rows)},
            }

    def save(self, path: str | Path):
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(canonical_json(self.to_dict()), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def from_dict(cls, data: dict) -> "RelationshipStore":
        if data.get("format") != FORMAT_NAME:
            raise RelationshipStoreError("not a relationship table file")
        if data.get("version") != FORMAT_VERSION:
            raise RelationshipStoreError(
                f"unsupported relationship table version {data.get('version')!r}"
            )
        store = cls()
        for vid, payload in data.get("segments", {}).items():
            store.add_segment(
                vid,
                [
                    RelationshipRow(vid, item["fid"], item["sid"], item["rl"], item["oid"])
                    for item in payload["rows"]
                ],
            )
        return store

    @classmethod
    def load(cls, path: str | Path) -> "RelationshipStore":
        import json

        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def join_triple(
    subject_rows: Iterable[RelationshipRow],
    object_rows: Iterable[RelationshipRow],
    rel_text: str,
    embedder: EmbeddingBackend | None,
    params: HyperParams,
    subject_matches: dict[tuple[str, int], EntityMatch] | None = None,
    object_matches: dict[tuple[str, int], EntityMatch] | None = None,
) -> list[CandidatePair]:
    """Join subject and object candidate rows on the shared stored row.

    A pair survives only when the same physical row appears in both inputs
    (the subject candidate as sid, the object candidate as oid, same vid
    and fid). When params.rel_label_threshold is set, the stored label must
    additionally be similar to the queried relationship text; otherwise the
    label is ignored here and checking is left to the verifier.
    """
    shared = set(subject_rows) & set(object_rows)

    if params.rel_label_threshold is not None and shared:
        if embedder is None:
            raise ValueError("rel_label_threshold set but no embedder provided")
        cut = effective_threshold(params.rel_label_threshold, params.temperature)
        query_vec = embedder.embed_text(rel_text)
        label_sims: dict[str, float] = {}
        for label in {row.rl for row in shared}:
            label_sims[label] = cosine_similarity(query_vec, embedder.embed_text(label))
        shared = {row for row in shared if label_sims[row.rl] >= cut}

    pairs = [
        CandidatePair(
            vid=row.vid,
            fid=row.fid,
            sid=row.sid,
            oid=row.oid,
            rl=row.rl,
            subject_match=(subject_matches or {}).get((row.vid, row.sid)),
            object_match=(object_matches or {}).get((row.vid, row.oid)),
        )
        for row in shared
    ]
    pairs.sort(key=lambda p: p.sort_key)
    return pairs


def filter_predicate(matches: Iterable[EntityMatch], role: str, comment: str = "") -> str:
    """Human-readable rendering of the relational selection a retrieval ran."""
    keys = ", ".join(f"({m.vid!r},{m.eid})" for m in matches) or "(none)"
    column = {"subject": "(vid, sid)", "object": "(vid, oid)", "either": "(vid, sid|oid)"}[role]
    suffix = f"  -- {comment}" if comment else ""
    return (
        f"SELECT vid, fid, sid, rl, oid FROM relationships WHERE {column} IN ({keys})"
        f" ORDER BY vid, fid, sid, rl, oid{suffix}"
    )
