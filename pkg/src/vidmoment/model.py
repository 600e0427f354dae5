"""Core domain types, the query document format, and query validation.

Everything downstream (stores, ingest, engine, service) depends on the
types in this module. All types are immutable after construction and safe
to share across concurrent pipeline stages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

TEMPORAL_OPS = ("<", "<=", ">", ">=", "=")

UNIT_NORM_TOL = 1e-6


class QueryError(Exception):
    """Base class for query document problems."""


class QueryFormatError(QueryError):
    """The document is not syntactically or structurally well-formed."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class QueryValidationError(QueryError):
    """The document parsed but violates query invariants."""

    def __init__(self, findings: list["Finding"]):
        super().__init__("; ".join(f.message for f in findings))
        self.findings = findings


def canonical_json(obj) -> str:
    """Deterministic JSON rendering used wherever bytes must be stable."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def effective_threshold(threshold: float, temperature: float) -> float:
    """Relax a similarity threshold multiplicatively by the search temperature."""
    return threshold * (1.0 - temperature)


def render_triple_text(subject_text: str, rel_text: str, object_text: str) -> str:
    """Render a query triple as the flat statement sent to the verifier."""
    return f"{subject_text} {rel_text} {object_text}"


# ---------------------------------------------------------------------------
# Stored data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VideoSegment:
    """A fixed run of frames; the unit of ingestion, parallelism and results.

    frame_ids are global within the source video and must be strictly
    increasing and contiguous. Segments of one source video must not overlap.
    """

    vid: str
    source_video: str
    frame_ids: tuple[int, ...]
    fps: float
    frame_image_refs: Mapping[int, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "frame_ids", tuple(int(f) for f in self.frame_ids))
        object.__setattr__(self, "fps", float(self.fps))
        if not self.vid:
            raise ValueError("segment vid must be non-empty")
        if not self.frame_ids:
            raise ValueError(f"segment {self.vid}: frame_ids must be non-empty")
        if self.fps <= 0:
            raise ValueError(f"segment {self.vid}: fps must be positive")
        first = self.frame_ids[0]
        for offset, fid in enumerate(self.frame_ids):
            if fid != first + offset:
                raise ValueError(
                    f"segment {self.vid}: frame_ids must be contiguous and increasing"
                )
        if self.frame_image_refs is not None:
            frames = set(self.frame_ids)
            for fid in self.frame_image_refs:
                if fid not in frames:
                    raise ValueError(
                        f"segment {self.vid}: image ref for unknown frame {fid}"
                    )

    @property
    def frame_range(self) -> tuple[int, int]:
        return self.frame_ids[0], self.frame_ids[-1]

    def frame_ref(self, fid: int) -> str:
        """Opaque image locator for a frame; synthesized when none was ingested."""
        if self.frame_image_refs is not None and fid in self.frame_image_refs:
            return self.frame_image_refs[fid]
        return f"frame://{self.vid}/{fid}"


@dataclass(frozen=True, eq=False)
class EntityRecord:
    """One tracked entity within a segment, with its two embedding vectors.

    image_fallback marks records whose image embedding was derived from a
    label placeholder because the source had no crop for the entity.
    """

    vid: str
    eid: int
    label: str
    text_embedding: np.ndarray
    image_embedding: np.ndarray
    frame_ids: tuple[int, ...]
    image_fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "frame_ids", tuple(int(f) for f in self.frame_ids))
        for name, vec in (("text", self.text_embedding), ("image", self.image_embedding)):
            if vec.ndim != 1 or vec.size == 0:
                raise ValueError(f"entity ({self.vid},{self.eid}): bad {name} embedding shape")
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise ValueError(
                    f"entity ({self.vid},{self.eid}): {name} embedding norm {norm} is not 1"
                )
            vec.setflags(write=False)
        if not self.frame_ids:
            raise ValueError(f"entity ({self.vid},{self.eid}): appears in no frame")


@dataclass(frozen=True, order=True)
class RelationshipRow:
    """One observed subject-predicate-object instance in one frame."""

    vid: str
    fid: int
    sid: int
    rl: str
    oid: int

    def __post_init__(self):
        if self.sid == self.oid:
            raise ValueError(f"row ({self.vid},{self.fid}): subject equals object")


# ---------------------------------------------------------------------------
# Query model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryEntity:
    key: str
    text: str


@dataclass(frozen=True)
class QueryRelationship:
    key: str
    text: str


@dataclass(frozen=True, order=True)
class Triple:
    """(subject, relationship, object) reference into the declared keys."""

    subject_key: str
    rel_key: str
    object_key: str


@dataclass(frozen=True)
class FrameSpec:
    """The triples that must co-occur in one query frame."""

    frame_index: int
    triples: tuple[Triple, ...]


@dataclass(frozen=True)
class TemporalConstraint:
    """Encodes fid(later_index) - fid(earlier_index) OP bound, in frames."""

    later_index: int
    earlier_index: int
    op: str
    bound: int


@dataclass(frozen=True)
class QuerySpec:
    """The four-part event query: entities, relationships, frames, constraints."""

    entities: tuple[QueryEntity, ...]
    relationships: tuple[QueryRelationship, ...]
    frames: tuple[FrameSpec, ...]
    temporal_constraints: tuple[TemporalConstraint, ...] = ()

    def entity_text(self, key: str) -> str:
        for ent in self.entities:
            if ent.key == key:
                return ent.text
        raise KeyError(key)

    def rel_text(self, key: str) -> str:
        for rel in self.relationships:
            if rel.key == key:
                return rel.text
        raise KeyError(key)

    def distinct_triples(self) -> tuple[Triple, ...]:
        """All distinct triples across frames, in first-appearance order."""
        seen: dict[Triple, None] = {}
        for frame in self.frames:
            for triple in frame.triples:
                seen.setdefault(triple)
        return tuple(seen)

    def used_entity_keys(self) -> tuple[str, ...]:
        """Entity keys referenced by at least one triple, in declaration order."""
        used = {t.subject_key for t in self.distinct_triples()}
        used |= {t.object_key for t in self.distinct_triples()}
        return tuple(e.key for e in self.entities if e.key in used)

    def triple_text(self, triple: Triple) -> str:
        return render_triple_text(
            self.entity_text(triple.subject_key),
            self.rel_text(triple.rel_key),
            self.entity_text(triple.object_key),
        )


@dataclass(frozen=True)
class HyperParams:
    """Search knobs exposed to the user.

    temperature relaxes both similarity thresholds multiplicatively:
    the effective threshold is t * (1 - temperature). rel_label_threshold,
    when set, enables coarse relationship-label filtering before
    verification; unset defers label checking entirely to the verifier.
    """

    top_k: int = 10
    temperature: float = 0.0
    text_threshold: float = 0.7
    image_threshold: float = 0.7
    rel_label_threshold: float | None = None

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 <= self.temperature < 1.0:
            raise ValueError("temperature must be in [0, 1)")
        for name in ("text_threshold", "image_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.rel_label_threshold is not None and not 0.0 <= self.rel_label_threshold <= 1.0:
            raise ValueError("rel_label_threshold must be in [0, 1]")

    def effective_text_threshold(self) -> float:
        return effective_threshold(self.text_threshold, self.temperature)

    def effective_image_threshold(self) -> float:
        return effective_threshold(self.image_threshold, self.temperature)


@dataclass(frozen=True)
class TripleEvidence:
    frame_index: int
    triple: Triple
    confidence: float


@dataclass(frozen=True)
class MatchResult:
    """A satisfying assignment of query frames and entities in one segment."""

    vid: str
    frame_assignment: Mapping[int, int]
    entity_bindings: Mapping[str, int]
    triple_evidence: tuple[TripleEvidence, ...]
    score: float

    def identity(self) -> tuple:
        """Hashable identity ignoring evidence and score."""
        fids = tuple(self.frame_assignment[i] for i in sorted(self.frame_assignment))
        bindings = tuple(sorted(self.entity_bindings.items()))
        return (self.vid, fids, bindings)

    def to_dict(self) -> dict:
        return {
            "vid": self.vid,
            "frames": {str(i): self.frame_assignment[i] for i in sorted(self.frame_assignment)},
            "entities": {k: self.entity_bindings[k] for k in sorted(self.entity_bindings)},
            "evidence": [
                {
                    "frame": ev.frame_index,
                    "triple": [ev.triple.subject_key, ev.triple.rel_key, ev.triple.object_key],
                    "confidence": ev.confidence,
                }
                for ev in self.triple_evidence
            ],
            "score": self.score,
        }


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    code: str
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def errors(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == "error")

    @property
    def warnings(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == "warning")


def constraint_interval(op: str, bound: int) -> tuple[float, float]:
    """Closed interval [lo, hi] of allowed values for (f_later - f_earlier).

    Frame ids are integers, so strict ops tighten by one.
    """
    if op == ">":
        return (bound + 1, math.inf)
    if op == ">=":
        return (bound, math.inf)
    if op == "<":
        return (-math.inf, bound - 1)
    if op == "<=":
        return (-math.inf, bound)
    if op == "=":
        return (bound, bound)
    raise ValueError(f"unknown temporal op {op!r}")


def pair_difference_bounds(
    constraints: Iterable[TemporalConstraint], n_frames: int
) -> dict[tuple[int, int], tuple[float, float]]:
    """Allowed intervals for fid(j) - fid(i) over all pairs i < j.

    Starts from the implicit ordering (consecutive query frames map to
    strictly increasing fids, so fid(j) - fid(i) >= j - i) and intersects
    every explicit constraint on the pair.
    """
    bounds: dict[tuple[int, int], tuple[float, float]] = {}
    for i in range(n_frames):
        for j in range(i + 1, n_frames):
            bounds[(i, j)] = (j - i, math.inf)
    for con in constraints:
        lo, hi = constraint_interval(con.op, con.bound)
        i, j = con.earlier_index, con.later_index
        if i > j:
            # constraint written against the reversed pair: negate the interval
            i, j = j, i
            lo, hi = -hi, -lo
        cur = bounds[(i, j)]
        bounds[(i, j)] = (max(cur[0], lo), min(cur[1], hi))
    return bounds


def _difference_system_unsatisfiable(
    constraints: Iterable[TemporalConstraint], n_frames: int
) -> bool:
    """Bellman-Ford negative-cycle test on the difference-constraint graph.

    Catches chained contradictions (e.g. f1-f0>2, f2-f1>2, f2-f0<3) that
    pairwise interval intersection misses. Includes the implicit ordering
    edges fid(i+1) - fid(i) >= 1.
    """
    edges: list[tuple[int, int, float]] = []  # f[v] - f[u] <= w
    for i in range(n_frames - 1):
        edges.append((i + 1, i, -1.0))
    for con in constraints:
        lo, hi = constraint_interval(con.op, con.bound)
        e, l = con.earlier_index, con.later_index
        if math.isfinite(hi):
            edges.append((e, l, hi))
        if math.isfinite(lo):
            edges.append((l, e, -lo))
    dist = [0.0] * n_frames
    for _ in range(n_frames):
        changed = False
        for u, v, w in edges:
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            return False
    return changed


def validate_query(q: QuerySpec) -> ValidationReport:
    """Report every invariant violation in a query; empty report iff valid.

    Warnings (declared keys never used in a triple) do not make the query
    invalid and are ignored by the engine.
    """
    findings: list[Finding] = []

    entity_keys: set[str] = set()
    for ent in q.entities:
        if ent.key in entity_keys:
            findings.append(Finding("duplicate-entity-key", f"duplicate entity key {ent.key!r}"))
        entity_keys.add(ent.key)
        if not ent.text:
            findings.append(Finding("empty-entity-text", f"entity {ent.key!r} has empty text"))
    rel_keys: set[str] = set()
    for rel in q.relationships:
        if rel.key in rel_keys:
            findings.append(
                Finding("duplicate-relationship-key", f"duplicate relationship key {rel.key!r}")
            )
        rel_keys.add(rel.key)
        if not rel.text:
            findings.append(
                Finding("empty-relationship-text", f"relationship {rel.key!r} has empty text")
            )

    if not q.frames:
        findings.append(Finding("empty-frames", "frames list is empty"))

    used_entities: set[str] = set()
    used_rels: set[str] = set()
    for pos, frame in enumerate(q.frames):
        if frame.frame_index != pos:
            findings.append(
                Finding(
                    "bad-frame-index",
                    f"frame at position {pos} carries index {frame.frame_index}",
                )
            )
        if not frame.triples:
            findings.append(Finding("empty-frame", f"empty frame spec at index {pos}"))
        for triple in frame.triples:
            for key in (triple.subject_key, triple.object_key):
                if key not in entity_keys:
                    findings.append(
                        Finding(
                            "unknown-entity-key",
                            f"frame {pos}: triple references undeclared entity {key!r}",
                        )
                    )
            if triple.rel_key not in rel_keys:
                findings.append(
                    Finding(
                        "unknown-relationship-key",
                        f"frame {pos}: triple references undeclared relationship {triple.rel_key!r}",
                    )
                )
            if triple.subject_key == triple.object_key:
                findings.append(
                    Finding(
                        "subject-equals-object",
                        f"frame {pos}: subject equals object ({triple.subject_key!r})",
                    )
                )
            used_entities.update((triple.subject_key, triple.object_key))
            used_rels.add(triple.rel_key)

    n = len(q.frames)
    constraints_ok = True
    for con in q.temporal_constraints:
        if con.op not in TEMPORAL_OPS:
            findings.append(Finding("bad-constraint-op", f"unknown temporal op {con.op!r}"))
            constraints_ok = False
            continue
        if con.later_index == con.earlier_index:
            findings.append(
                Finding("constraint-self-reference", "temporal constraint relates a frame to itself")
            )
            constraints_ok = False
        for idx in (con.later_index, con.earlier_index):
            if not 0 <= idx < n:
                findings.append(
                    Finding(
                        "constraint-index-out-of-range",
                        f"temporal constraint references frame index {idx} (frames: {n})",
                    )
                )
                constraints_ok = False

    if constraints_ok and n > 0 and q.temporal_constraints:
        bounds = pair_difference_bounds(q.temporal_constraints, n)
        infeasible_pairs = [(i, j) for (i, j), (lo, hi) in bounds.items() if lo > hi]
        if infeasible_pairs:
            pairs = ", ".join(f"f{j}-f{i}" for i, j in infeasible_pairs)
            findings.append(
                Finding("unsatisfiable-temporal", f"unsatisfiable constraint set on {pairs}")
            )
        elif _difference_system_unsatisfiable(q.temporal_constraints, n):
            findings.append(
                Finding(
                    "unsatisfiable-temporal",
                    "unsatisfiable constraint set (contradictory chain of frame differences)",
                )
            )

    for ent in q.entities:
        if ent.key not in used_entities:
            findings.append(
                Finding("unused-entity", f"entity {ent.key!r} is never used in a triple", "warning")
            )
    for rel in q.relationships:
        if rel.key not in used_rels:
            findings.append(
                Finding(
                    "unused-relationship",
                    f"relationship {rel.key!r} is never used in a triple",
                    "warning",
                )
            )

    return ValidationReport(tuple(findings))


# ---------------------------------------------------------------------------
# Query document format
# ---------------------------------------------------------------------------

_ENTITY_FIELDS = {"key", "text"}
_FRAME_FIELDS = {"index", "triples"}
_TEMPORAL_FIELDS = {"later", "earlier", "op", "bound"}


def _require(cond: bool, message: str):
    if not cond:
        raise QueryFormatError(message)


def _parse_keyed_text(items, section: str) -> list[tuple[str, str]]:
    _require(isinstance(items, list), f"section {section!r} must be a list")
    out = []
    for pos, item in enumerate(items):
        where = f"{section}[{pos}]"
        _require(isinstance(item, dict), f"{where} must be an object")
        _require(
            set(item) == _ENTITY_FIELDS,
            f"{where} must have exactly the fields 'key' and 'text'",
        )
        _require(isinstance(item["key"], str), f"{where}: 'key' must be a string")
        _require(isinstance(item["text"], str), f"{where}: 'text' must be a string")
        out.append((item["key"], item["text"]))
    return out


def parse_query(doc: str) -> QuerySpec:
    """Parse a query document into a QuerySpec, preserving declaration order.

    Raises QueryFormatError for syntax/shape problems (with character
    position for syntax errors) and QueryValidationError when the parsed
    query violates invariants (undeclared key, duplicate key, empty frame,
    unsatisfiable constraints, ...).
    """
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise QueryFormatError(
            f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}",
            position=exc.pos,
        ) from exc
    _require(isinstance(data, dict), "query document must be a JSON object")
    unknown = set(data) - {"entities", "relationships", "frames", "temporal"}
    _require(not unknown, f"unknown sections: {sorted(unknown)}")
    for section in ("entities", "relationships", "frames"):
        _require(section in data, f"missing section {section!r}")

    entities = tuple(QueryEntity(k, t) for k, t in _parse_keyed_text(data["entities"], "entities"))
    relationships = tuple(
        QueryRelationship(k, t) for k, t in _parse_keyed_text(data["relationships"], "relationships")
    )

    _require(isinstance(data["frames"], list), "section 'frames' must be a list")
    frames = []
    for pos, item in enumerate(data["frames"]):
        where = f"frames[{pos}]"
        _require(isinstance(item, dict), f"{where} must be an object")
        _require(set(item) == _FRAME_FIELDS, f"{where} must have exactly 'index' and 'triples'")
        _require(
            isinstance(item["index"], int) and not isinstance(item["index"], bool),
            f"{where}: 'index' must be an integer",
        )
        _require(isinstance(item["triples"], list), f"{where}: 'triples' must be a list")
        triples: dict[Triple, None] = {}
        for tpos, raw in enumerate(item["triples"]):
            _require(
                isinstance(raw, list)
                and len(raw) == 3
                and all(isinstance(x, str) for x in raw),
                f"{where}.triples[{tpos}] must be a [subject, relationship, object] string triple",
            )
            triples.setdefault(Triple(raw[0], raw[1], raw[2]))
        frames.append(FrameSpec(item["index"], tuple(triples)))

    temporal = []
    for pos, item in enumerate(data.get("temporal", [])):
        where = f"temporal[{pos}]"
        _require(isinstance(item, dict), f"{where} must be an object")
        _require(
            set(item) == _TEMPORAL_FIELDS,
            f"{where} must have exactly 'later', 'earlier', 'op', 'bound'",
        )
        for name in ("later", "earlier", "bound"):
            _require(
                isinstance(item[name], int) and not isinstance(item[name], bool),
                f"{where}: {name!r} must be an integer",
            )
        _require(item["op"] in TEMPORAL_OPS, f"{where}: op must be one of {'|'.join(TEMPORAL_OPS)}")
        temporal.append(
            TemporalConstraint(item["later"], item["earlier"], item["op"], item["bound"])
        )

    spec = QuerySpec(entities, relationships, tuple(frames), tuple(temporal))
    report = validate_query(spec)
    if not report.ok:
        raise QueryValidationError(list(report.errors))
    return spec


def serialize_query(q: QuerySpec) -> str:
    """Render a QuerySpec back to the query document format."""
    doc = {
        "entities": [{"key": e.key, "text": e.text} for e in q.entities],
        "relationships": [{"key": r.key, "text": r.text} for r in q.relationships],
        "frames": [
            {
                "index": f.frame_index,
                "triples": [[t.subject_key, t.rel_key, t.object_key] for t in f.triples],
            }
            for f in q.frames
        ],
        "temporal": [
            {"later": c.later_index, "earlier": c.earlier_index, "op": c.op, "bound": c.bound}
            for c in q.temporal_constraints
        ],
    }
    return json.dumps(doc, indent=2)
