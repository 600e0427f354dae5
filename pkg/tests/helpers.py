"""Shared test machinery: synthetic corpora and brute-force oracles.

The oracles deliberately reimplement the system's semantics from scratch
(scalar arithmetic, full scans, itertools enumeration) so they share no
code path with the engine they check.
"""

from __future__ import annotations

import math
import operator
import random
from dataclasses import dataclass
from itertools import product

from vidmoment import (
    EntityStore,
    GroundTruthSidecar,
    HyperParams,
    MockEmbedder,
    MockVerifier,
    QueryEngine,
    QuerySpec,
    RelationshipRow,
    RelationshipStore,
    VideoSegment,
    ingest_scene_graph,
    validate_query,
)
from vidmoment.ingest import Detection, SceneGraphDocument

ENTITY_VOCAB = [
    "man with backpack",
    "bicycle",
    "man in red",
    "woman with umbrella",
    "delivery truck",
    "dog",
    "child on scooter",
    "bus",
    "street vendor",
    "police officer",
    "shopping cart",
    "motorcycle",
]

PREDICATE_VOCAB = ["is near", "leftOf", "rightOf", "behind", "holding", "facing"]


def scalar_cosine(a, b) -> float:
    """High-precision cosine used only by oracles (fsum, no numpy)."""
    dot = math.fsum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(math.fsum(float(x) * float(x) for x in a))
    nb = math.sqrt(math.fsum(float(y) * float(y) for y in b))
    return dot / (na * nb)


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class MockWorld:
    """A generated corpus ingested into fresh stores with mock backends."""

    docs: list[SceneGraphDocument]
    sidecar: GroundTruthSidecar
    embedder: MockEmbedder
    verifier: MockVerifier
    entity_store: EntityStore
    relationship_store: RelationshipStore
    true_patterns: list[tuple[str, str, str]]  # (subject label, predicate, object label)
    # vid -> ordered (fid, [label patterns true in that frame]); used to bias
    # query generation towards events that actually occur
    event_frames: dict[str, list[tuple[int, list[tuple[str, str, str]]]]]

    def engine(self, workers: int = 1) -> QueryEngine:
        return QueryEngine(
            self.entity_store, self.relationship_store, self.embedder, self.verifier, workers
        )


def build_world(
    rng: random.Random,
    n_segments: int,
    frames_per_segment: int,
    entities_per_segment: tuple[int, int] = (3, 15),
    rows_per_segment: tuple[int, int] = (8, 40),
    truth_rate: float = 0.6,
    dimension: int = 64,
    seed: int | None = None,
) -> MockWorld:
    """Random segments with two kinds of content: recurring "protagonist"
    entities that act out clustered events (rows plus ground truth in a few
    frames, with stable entity identities across the cluster so multi-frame
    queries can bind consistently), and background entities with scattered,
    mostly unverified rows."""
    sidecar = GroundTruthSidecar()
    embedder = MockEmbedder(dimension, seed if seed is not None else rng.randrange(1 << 30), sidecar)
    verifier = MockVerifier(sidecar)
    entity_store = EntityStore(dimension=dimension)
    relationship_store = RelationshipStore()
    docs: list[SceneGraphDocument] = []
    true_patterns: list[tuple[str, str, str]] = []
    event_frames: dict[str, list[tuple[int, list[tuple[str, str, str]]]]] = {}

    for index in range(n_segments):
        vid = f"v{index:03d}"
        start = index * frames_per_segment
        segment = VideoSegment(
            vid, "cam0", tuple(range(start, start + frames_per_segment)), 2.0
        )
        n_entities = rng.randint(*entities_per_segment)
        n_protagonists = min(n_entities, rng.randint(2, 4))
        detections = []
        for eid in range(1, n_entities + 1):
            label = rng.choice(ENTITY_VOCAB)
            if eid <= n_protagonists:
                track = tuple(range(start, start + frames_per_segment))
            else:
                track_len = rng.randint(max(1, frames_per_segment // 3), frames_per_segment)
                track_start = start + rng.randint(0, frames_per_segment - track_len)
                track = tuple(range(track_start, track_start + track_len))
            crops = {}
            if rng.random() < 0.3:
                locator = f"crop://{vid}/{eid}"
                crops[track[0]] = locator
                # occasionally the crop shows a different label than the text
                crop_label = label if rng.random() < 0.7 else rng.choice(ENTITY_VOCAB)
                sidecar.register_image(locator, crop_label)
            detections.append(Detection(eid, label, track, crops))

        rows: set[RelationshipRow] = set()
        truths: dict[int, set[str]] = {}

        # clustered events among protagonists, with stable pair identities
        pair_pool = []
        for _ in range(rng.randint(2, 3)):
            a, b = rng.sample(range(1, n_protagonists + 1), 2) if n_protagonists >= 2 else (1, 1)
            if a != b:
                pair_pool.append((a, b))
        cluster_fids = sorted(
            rng.sample(range(start, start + frames_per_segment),
                       min(frames_per_segment, rng.randint(2, 5)))
        )
        segment_events: list[tuple[int, list[tuple[str, str, str]]]] = []
        for fid in cluster_fids:
            frame_patterns = []
            for sid, oid in rng.sample(pair_pool, rng.randint(1, len(pair_pool))) if pair_pool else []:
                predicate = rng.choice(PREDICATE_VOCAB)
                rows.add(RelationshipRow(vid, fid, sid, predicate, oid))
                if rng.random() < 0.9:
                    s_label = detections[sid - 1].label
                    o_label = detections[oid - 1].label
                    truths.setdefault(fid, set()).add(f"{s_label} {predicate} {o_label}")
                    frame_patterns.append((s_label, predicate, o_label))
                    true_patterns.append((s_label, predicate, o_label))
            if frame_patterns:
                segment_events.append((fid, frame_patterns))
        event_frames[vid] = segment_events

        # scattered background rows, verified at the configured rate
        for _ in range(rng.randint(*rows_per_segment)):
            fid = rng.randrange(start, start + frames_per_segment)
            present = [d for d in detections if fid in d.frame_ids]
            if len(present) < 2:
                continue
            subject, obj = rng.sample(present, 2)
            predicate = rng.choice(PREDICATE_VOCAB)
            rows.add(RelationshipRow(vid, fid, subject.eid, predicate, obj.eid))
            if rng.random() < truth_rate:
                statement = f"{subject.label} {predicate} {obj.label}"
                truths.setdefault(fid, set()).add(statement)
                true_patterns.append((subject.label, predicate, obj.label))
        sidecar.register_segment_truths(vid, truths)

        doc = SceneGraphDocument(segment, tuple(detections), tuple(sorted(rows)))
        docs.append(doc)
        ingest_scene_graph(doc, embedder, entity_store, relationship_store)

    return MockWorld(
        docs, sidecar, embedder, verifier, entity_store, relationship_store,
        true_patterns, event_frames,
    )


def random_params(rng: random.Random, top_k: int = 100000) -> HyperParams:
    return HyperParams(
        top_k=top_k,
        temperature=rng.choice([0.0, 0.1, 0.3]),
        text_threshold=rng.choice([0.6, 0.7, 0.8]),
        image_threshold=rng.choice([0.6, 0.7, 0.8]),
        rel_label_threshold=rng.choice([None, None, 0.8]),
    )


def _satisfied_constraint(rng: random.Random, i: int, j: int, diff: int):
    """A constraint on (earlier=i, later=j) that the frame gap `diff` satisfies."""
    from vidmoment import TemporalConstraint

    op = rng.choice(["<", "<=", ">", ">=", "="])
    if op == ">":
        bound = diff - rng.randint(1, 3)
    elif op == ">=":
        bound = diff - rng.randint(0, 3)
    elif op == "<":
        bound = diff + rng.randint(1, 3)
    elif op == "<=":
        bound = diff + rng.randint(0, 3)
    else:
        bound = diff
    return TemporalConstraint(j, i, op, bound)


def random_query(rng: random.Random, world: MockWorld) -> QuerySpec:
    """A valid random query, biased towards events that actually occur.

    Roughly half the queries replay clustered events from the corpus (so
    matches are common); the rest combine patterns freely, including
    descriptions that match nothing.
    """
    from vidmoment import FrameSpec, QueryEntity, QueryRelationship, TemporalConstraint, Triple

    entity_keys: dict[str, str] = {}  # label -> primary key
    entities: list[QueryEntity] = []
    relationships: dict[str, str] = {}  # predicate text -> key
    rel_decls: list[QueryRelationship] = []

    def entity_key(label: str, force_new: bool = False) -> str:
        if not force_new and label in entity_keys:
            return entity_keys[label]
        key = f"e{len(entities) + 1}"
        entities.append(QueryEntity(key, label))
        if label not in entity_keys:
            entity_keys[label] = key
        return key

    def rel_key(text: str) -> str:
        if text not in relationships:
            key = f"r{len(rel_decls) + 1}"
            relationships[text] = key
            rel_decls.append(QueryRelationship(key, text))
        return relationships[text]

    def add_triple(triples, s_label, predicate, o_label):
        s_key = entity_key(s_label)
        o_key = entity_key(o_label, force_new=(s_label == o_label))
        if s_key == o_key:
            o_key = entity_key(o_label, force_new=True)
        triples.setdefault(Triple(s_key, rel_key(predicate), o_key))

    n_frames = rng.randint(1, 3)
    frames = []
    event_fids: list[int] | None = None

    eligible = [vid for vid, events in world.event_frames.items() if len(events) >= n_frames]
    if eligible and rng.random() < 0.55:
        # replay a real event sequence from one segment
        events = world.event_frames[rng.choice(eligible)]
        chosen = sorted(rng.sample(range(len(events)), n_frames))
        event_fids = [events[i][0] for i in chosen]
        for frame_index, event_index in enumerate(chosen):
            _fid, patterns = events[event_index]
            triples: dict[Triple, None] = {}
            for s_label, predicate, o_label in rng.sample(
                patterns, rng.randint(1, min(3, len(patterns)))
            ):
                add_triple(triples, s_label, predicate, o_label)
            frames.append(FrameSpec(frame_index, tuple(triples)))
    else:
        for frame_index in range(n_frames):
            triples = {}
            for _ in range(rng.randint(1, 3)):
                roll = rng.random()
                if roll < 0.7 and world.true_patterns:
                    s_label, predicate, o_label = rng.choice(world.true_patterns)
                elif roll < 0.9:
                    s_label = rng.choice(ENTITY_VOCAB)
                    o_label = rng.choice(ENTITY_VOCAB)
                    predicate = rng.choice(PREDICATE_VOCAB)
                else:
                    s_label = "antigravity sled"  # matches nothing in any corpus
                    o_label = rng.choice(ENTITY_VOCAB)
                    predicate = rng.choice(PREDICATE_VOCAB)
                add_triple(triples, s_label, predicate, o_label)
            frames.append(FrameSpec(frame_index, tuple(triples)))

    for _ in range(20):
        constraints = []
        for _ in range(rng.randint(0, 2)):
            if n_frames < 2:
                break
            if event_fids is not None and rng.random() < 0.7:
                i, j = sorted(rng.sample(range(n_frames), 2))
                constraints.append(
                    _satisfied_constraint(rng, i, j, event_fids[j] - event_fids[i])
                )
            else:
                later, earlier = rng.sample(range(n_frames), 2)
                constraints.append(
                    TemporalConstraint(
                        later, earlier, rng.choice(["<", "<=", ">", ">=", "="]),
                        rng.randint(-6, 10),
                    )
                )
        spec = QuerySpec(tuple(entities), tuple(rel_decls), tuple(frames), tuple(constraints))
        if validate_query(spec).ok:
            return spec
    return QuerySpec(tuple(entities), tuple(rel_decls), tuple(frames), ())


# ---------------------------------------------------------------------------
# The planted backpack/bicycle corpus
# ---------------------------------------------------------------------------

EXAMPLE_QUERY_DOC = """{
  "entities": [
    {"key": "e1", "text": "man with backpack"},
    {"key": "e2", "text": "bicycle"},
    {"key": "e3", "text": "man in red"}
  ],
  "relationships": [
    {"key": "r1", "text": "is near"},
    {"key": "r2", "text": "leftOf"},
    {"key": "r3", "text": "rightOf"}
  ],
  "frames": [
    {"index": 0, "triples": [["e1", "r1", "e2"], ["e3", "r2", "e2"]]},
    {"index": 1, "triples": [["e1", "r1", "e2"], ["e3", "r3", "e2"]]}
  ],
  "temporal": [{"later": 1, "earlier": 0, "op": ">", "bound": 4}]
}
"""

PLANTED_VID = "v-plant"
PLANTED_FIDS = (10, 16)
PLANTED_BINDINGS = {"e1": 1, "e2": 2, "e3": 3}

_NEAR = "man with backpack is near bicycle"
_LEFT = "man in red leftOf bicycle"
_RIGHT = "man in red rightOf bicycle"


def build_example_world(dimension: int = 64, seed: int = 7) -> MockWorld:
    """The planted two-frame event plus decoy segments that must be rejected.

    v-plant     the real event: leftOf at frame 10, rightOf at 16 (gap 6 > 4)
    v-swap      ordering reversed (rightOf first)
    v-gap       correct ordering but only 3 frames apart
    v-ident     two bicycles; each frame works only with a different one
    v-unverified rows exist but ground truth never confirms leftOf
    v-noise     unrelated entities only
    """
    sidecar = GroundTruthSidecar()
    embedder = MockEmbedder(dimension, seed, sidecar)
    verifier = MockVerifier(sidecar)
    entity_store = EntityStore(dimension=dimension)
    relationship_store = RelationshipStore()
    docs: list[SceneGraphDocument] = []

    def add_segment(vid, labels, rows, truths, crops=None):
        segment = VideoSegment(vid, f"src-{vid}", tuple(range(20)), 2.0)
        detections = tuple(
            Detection(eid, label, tuple(range(20)), (crops or {}).get(eid, {}))
            for eid, label in labels.items()
        )
        doc = SceneGraphDocument(
            segment, detections, tuple(RelationshipRow(vid, f, s, r, o) for f, s, r, o in rows)
        )
        sidecar.register_segment_truths(vid, truths)
        ingest_scene_graph(doc, embedder, entity_store, relationship_store)
        docs.append(doc)

    cast = {1: "man with backpack", 2: "bicycle", 3: "man in red", 4: "dog"}
    sidecar.register_image("crop://v-plant/2", "bicycle")
    add_segment(
        PLANTED_VID,
        cast,
        [(10, 1, "near", 2), (16, 1, "near", 2), (10, 3, "leftOf", 2), (16, 3, "rightOf", 2),
         (11, 4, "behind", 2)],
        {10: {_NEAR, _LEFT}, 16: {_NEAR, _RIGHT}, 11: {"dog behind bicycle"}},
        crops={2: {0: "crop://v-plant/2"}},
    )
    add_segment(
        "v-swap",
        cast,
        [(5, 1, "near", 2), (12, 1, "near", 2), (5, 3, "rightOf", 2), (12, 3, "leftOf", 2)],
        {5: {_NEAR, _RIGHT}, 12: {_NEAR, _LEFT}},
    )
    add_segment(
        "v-gap",
        cast,
        [(8, 1, "near", 2), (11, 1, "near", 2), (8, 3, "leftOf", 2), (11, 3, "rightOf", 2)],
        {8: {_NEAR, _LEFT}, 11: {_NEAR, _RIGHT}},
    )
    add_segment(
        "v-ident",
        {1: "man with backpack", 2: "bicycle", 3: "man in red", 4: "bicycle"},
        [(3, 1, "near", 2), (3, 3, "leftOf", 2), (9, 1, "near", 4), (9, 3, "rightOf", 4)],
        {3: {_NEAR, _LEFT}, 9: {_NEAR, _RIGHT}},
    )
    add_segment(
        "v-unverified",
        cast,
        [(4, 1, "near", 2), (12, 1, "near", 2), (4, 3, "leftOf", 2), (12, 3, "rightOf", 2)],
        {4: {_NEAR}, 12: {_NEAR, _RIGHT}},
    )
    add_segment(
        "v-noise",
        {1: "dog", 2: "bus", 3: "street vendor"},
        [(2, 1, "behind", 2), (7, 3, "is near", 2)],
        {2: {"dog behind bus"}, 7: {"street vendor is near bus"}},
    )

    patterns = [
        ("man with backpack", "is near", "bicycle"),
        ("man in red", "leftOf", "bicycle"),
        ("man in red", "rightOf", "bicycle"),
    ]
    events = {
        PLANTED_VID: [
            (10, [patterns[0], patterns[1]]),
            (16, [patterns[0], patterns[2]]),
        ]
    }
    return MockWorld(
        docs, sidecar, embedder, verifier, entity_store, relationship_store, patterns, events
    )


def write_corpus(world: MockWorld, target_dir) -> None:
    """Write a MockWorld as an on-disk archive (segment files + sidecar)."""
    import json
    from pathlib import Path

    from vidmoment.ingest import scene_graph_to_dict

    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)
    for doc in world.docs:
        path = target / f"{doc.segment.vid}.json"
        path.write_text(json.dumps(scene_graph_to_dict(doc), indent=2), encoding="utf-8")
    world.sidecar.save(target / "sidecar.json")


# ---------------------------------------------------------------------------
# Brute-force stage oracles
# ---------------------------------------------------------------------------

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "=": operator.eq,
}


def oracle_join(subject_rows, object_rows, rel_text, embedder, params) -> list[tuple]:
    """Nested-loop join on the shared physical row, with the optional label gate."""
    out = []
    for row in subject_rows:
        for other in object_rows:
            if row != other:
                continue
            if params.rel_label_threshold is not None:
                sim = scalar_cosine(embedder.embed_text(rel_text), embedder.embed_text(row.rl))
                if sim < params.rel_label_threshold * (1.0 - params.temperature):
                    continue
            out.append((row.vid, row.fid, row.sid, row.oid, row.rl))
    return sorted(set(out))


def oracle_temporal(per_frame, constraints) -> set[tuple]:
    """Cartesian enumeration of frame-binding assignments, filtered directly."""
    results = set()
    for combo in product(*per_frame):
        if len({fb.vid for fb in combo}) != 1:
            continue
        fids = [fb.fid for fb in combo]
        if any(fids[i] >= fids[i + 1] for i in range(len(fids) - 1)):
            continue
        if not all(
            _OPS[c.op](fids[c.later_index] - fids[c.earlier_index], c.bound) for c in constraints
        ):
            continue
        merged: dict = {}
        ok = True
        for fb in combo:
            for key, eid in fb.entity_bindings.items():
                if merged.get(key, eid) != eid:
                    ok = False
                    break
                merged[key] = eid
            if not ok:
                break
        if ok:
            results.add((combo[0].vid, tuple(fids), tuple(sorted(merged.items()))))
    return results


def oracle_entity_candidates(
    world: MockWorld, text: str, params: HyperParams
) -> dict[tuple[str, int], tuple[float, float]]:
    """(vid, eid) -> (text sim, image sim) for records clearing the gate."""
    query_vec = world.embedder.embed_text(text)
    text_cut = params.text_threshold * (1.0 - params.temperature)
    image_cut = params.image_threshold * (1.0 - params.temperature)
    out = {}
    for record in world.entity_store.iter_records():
        text_sim = scalar_cosine(query_vec, record.text_embedding)
        image_sim = scalar_cosine(query_vec, record.image_embedding)
        if text_sim >= text_cut or image_sim >= image_cut:
            out[(record.vid, record.eid)] = (text_sim, image_sim)
    return out


def oracle_search(world: MockWorld, text: str, params: HyperParams) -> list[tuple[str, int]]:
    """Expected search output order: combined score desc, then (vid, eid)."""
    candidates = oracle_entity_candidates(world, text, params)
    return [
        key
        for key, _ in sorted(
            candidates.items(), key=lambda kv: (-max(kv[1][0], kv[1][1]), kv[0][0], kv[0][1])
        )
    ]


def oracle_execute(world: MockWorld, q: QuerySpec, params: HyperParams) -> set[tuple]:
    """Every satisfying (vid, fids, bindings), by direct enumeration.

    Scans stores and sidecar ground truth with no engine code: candidate
    entities by scalar cosine, triple satisfaction by row lookup plus
    ground-truth membership, assignments by Cartesian product filtered
    through the raw constraint operators.
    """
    used_keys = sorted({k for f in q.frames for t in f.triples for k in (t.subject_key, t.object_key)})
    candidates = {
        key: oracle_entity_candidates(world, q.entity_text(key), params) for key in used_keys
    }
    rel_gate_cache: dict[tuple[str, str], bool] = {}

    def rel_gate(rel_text: str, stored_label: str) -> bool:
        if params.rel_label_threshold is None:
            return True
        key = (rel_text, stored_label)
        if key not in rel_gate_cache:
            sim = scalar_cosine(
                world.embedder.embed_text(rel_text), world.embedder.embed_text(stored_label)
            )
            cut = params.rel_label_threshold * (1.0 - params.temperature)
            rel_gate_cache[key] = sim >= cut
        return rel_gate_cache[key]

    results: set[tuple] = set()
    for vid in world.entity_store.vids():
        per_key = {
            key: sorted(eid for (v, eid) in candidates[key] if v == vid) for key in used_keys
        }
        if any(not eids for eids in per_key.values()):
            continue
        rows_by_pair: dict[tuple[int, int], dict[int, set[str]]] = {}
        for row in world.relationship_store.rows(vid):
            rows_by_pair.setdefault((row.sid, row.oid), {}).setdefault(row.fid, set()).add(row.rl)
        fid_cache: dict[tuple, frozenset[int]] = {}

        def triple_fids(triple, binding) -> frozenset[int]:
            sid = binding[triple.subject_key]
            oid = binding[triple.object_key]
            cache_key = (triple, sid, oid)
            if cache_key in fid_cache:
                return fid_cache[cache_key]
            statement = (
                f"{q.entity_text(triple.subject_key)} {q.rel_text(triple.rel_key)} "
                f"{q.entity_text(triple.object_key)}"
            )
            ok = set()
            for fid, labels in rows_by_pair.get((sid, oid), {}).items():
                if not any(rel_gate(q.rel_text(triple.rel_key), label) for label in labels):
                    continue
                if statement in world.sidecar.frame_truths(vid, fid):
                    ok.add(fid)
            fid_cache[cache_key] = frozenset(ok)
            return fid_cache[cache_key]

        for combo in product(*(per_key[key] for key in used_keys)):
            binding = dict(zip(used_keys, combo))
            frame_sets = []
            feasible = True
            for frame in q.frames:
                sat = None
                for triple in frame.triples:
                    fids = triple_fids(triple, binding)
                    sat = fids if sat is None else sat & fids
                    if not sat:
                        feasible = False
                        break
                if not feasible:
                    break
                frame_sets.append(sorted(sat))
            if not feasible:
                continue
            for fids in product(*frame_sets):
                if any(fids[i] >= fids[i + 1] for i in range(len(fids) - 1)):
                    continue
                if all(
                    _OPS[c.op](fids[c.later_index] - fids[c.earlier_index], c.bound)
                    for c in q.temporal_constraints
                ):
                    results.add((vid, tuple(fids), tuple(sorted(binding.items()))))
    return results
