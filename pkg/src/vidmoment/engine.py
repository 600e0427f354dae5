"""The retrieval pipeline: entity matching, candidate retrieval, join,
verifier refinement, frame conjunction, temporal matching, ranking.

Every stage is a pure function of immutable inputs, so any stage's work
items may run concurrently; all merge points reduce in a fixed order.
Results are identical for any worker count. The verifier only ever sees
the coarse candidate pairs that survived vector thresholds and the
relational join, never the full frame set; metrics expose the call count
so that pruning is observable.
"""

from __future__ import annotations

import logging
import math
import time
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import fmean
from typing import Callable, Iterable, Mapping, Sequence

from .backends.base import VerifierBackend, VerifierRequest
from .entity_store import EntityMatch, EntityStore
from .model import (
    FrameSpec,
    HyperParams,
    MatchResult,
    QuerySpec,
    QueryValidationError,
    TemporalConstraint,
    Triple,
    TripleEvidence,
    canonical_json,
    pair_difference_bounds,
    validate_query,
)
from .relationship_store import CandidatePair, RelationshipStore, filter_predicate, join_triple

logger = logging.getLogger(__name__)

VERIFY_ACCEPT_CONFIDENCE = 0.5


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for reporting."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class VerifiedPair:
    pair: CandidatePair
    confidence: float


@dataclass(frozen=True)
class FrameBinding:
    """One frame in which all triples of a query frame hold under one binding."""

    vid: str
    fid: int
    entity_bindings: Mapping[str, int]
    min_confidence: float

    @property
    def binding_key(self) -> tuple:
        return tuple(sorted(self.entity_bindings.items()))


@dataclass(frozen=True)
class MatchSkeleton:
    """A temporal assignment before evidence and scoring are attached."""

    vid: str
    fids: tuple[int, ...]
    bindings: Mapping[str, int]


@dataclass
class StageMetrics:
    entity_candidates: dict[str, int] = field(default_factory=dict)
    triple_stats: dict[str, dict[str, int]] = field(default_factory=dict)
    coarse_pairs: int = 0
    distinct_pairs: int = 0
    verifier_calls: int = 0
    verified_pairs: int = 0
    frame_bindings: list[int] = field(default_factory=list)
    results_before_top_k: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    predicates: list[str] = field(default_factory=list)
    workers: int = 1
    short_circuited: bool = False

    def to_dict(self) -> dict:
        return {
            "entity_candidates": dict(sorted(self.entity_candidates.items())),
            "triple_stats": self.triple_stats,
            "coarse_pairs": self.coarse_pairs,
            "distinct_pairs": self.distinct_pairs,
            "verifier_calls": self.verifier_calls,
            "verified_pairs": self.verified_pairs,
            "frame_bindings": list(self.frame_bindings),
            "results_before_top_k": self.results_before_top_k,
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
            "workers": self.workers,
            "short_circuited": self.short_circuited,
        }


@dataclass(frozen=True)
class ExecutionReport:
    results: tuple[MatchResult, ...]
    metrics: StageMetrics

    def results_payload(self) -> bytes:
        """Canonical bytes of the ranked results (metrics carry timings and
        are deliberately excluded so payloads are comparable across runs)."""
        return canonical_json([r.to_dict() for r in self.results]).encode("utf-8")

    def to_dict(self) -> dict:
        return {
            "results": [r.to_dict() for r in self.results],
            "metrics": self.metrics.to_dict(),
        }


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def score_result(
    entity_similarities: Iterable[float], triple_confidences: Iterable[float]
) -> float:
    """Geometric mean of (mean entity similarity, min triple confidence).

    Monotone non-decreasing in every input; any zero confidence
    annihilates the score. Empty inputs score 0.
    """
    sims = list(entity_similarities)
    confs = list(triple_confidences)
    if not sims or not confs:
        return 0.0
    for value in (*sims, *confs):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"score inputs must lie in [0, 1], got {value}")
    return math.sqrt(fmean(sims) * min(confs))


def refine_relationships(
    pairs: Sequence[CandidatePair],
    triple_text: str,
    verifier: VerifierBackend,
    frame_ref: Callable[[str, int], str],
    cache: dict | None = None,
    workers: int = 1,
    on_error: str = "drop",
) -> tuple[list[VerifiedPair], int]:
    """Verify candidate pairs against frame images; keep confident ones.

    The verifier is invoked once per distinct (vid, fid, sid, oid,
    triple_text); duplicates hit the per-query cache. Pairs at confidence
    >= 0.5 survive. A failing verifier call drops its pair with a warning
    (on_error="drop") or aborts the stage (on_error="abort"). Returns the
    surviving pairs and the number of verifier invocations made.
    """
    if cache is None:
        cache = {}
    distinct: dict[tuple, None] = {}
    for pair in sorted(pairs, key=lambda p: p.sort_key):
        distinct.setdefault((pair.vid, pair.fid, pair.sid, pair.oid))
    missing = [k for k in distinct if (*k, triple_text) not in cache]

    def call(key: tuple) -> float | None:
        vid, fid, _sid, _oid = key
        request = VerifierRequest(frame_ref(vid, fid), triple_text, vid, fid)
        try:
            confidence = float(verifier.verify_triple(request))
            if not 0.0 <= confidence <= 1.0:
                raise ValueError(f"verifier confidence {confidence} outside [0, 1]")
            return confidence
        except Exception as exc:
            if on_error == "abort":
                raise StageError("refinement", exc) from exc
            logger.warning(
                "verifier failed for %s in (%s, %s); dropping pair: %s", triple_text, vid, fid, exc
            )
            return None

    if workers > 1 and len(missing) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            confidences = list(executor.map(call, missing))
    else:
        confidences = [call(k) for k in missing]
    for key, confidence in zip(missing, confidences):
        cache[(*key, triple_text)] = confidence

    verified = []
    for pair in sorted(pairs, key=lambda p: p.sort_key):
        confidence = cache[(pair.vid, pair.fid, pair.sid, pair.oid, triple_text)]
        if confidence is not None and confidence >= VERIFY_ACCEPT_CONFIDENCE:
            verified.append(VerifiedPair(pair, confidence))
    return verified, len(missing)


def conjoin_frame(
    fs: FrameSpec, verified: Mapping[Triple, Sequence[VerifiedPair]]
) -> list[FrameBinding]:
    """Frames where every triple of the spec holds under one consistent binding.

    Natural join on (vid, fid) across the spec's triples: an entity key
    bound by one triple must bind to the same eid in every other triple of
    the frame. min_confidence is the minimum over the frame's triples.
    """
    if not fs.triples:
        return []
    for triple in fs.triples:
        if triple not in verified:
            raise ValueError(f"no verified pairs supplied for triple {triple}")

    grouped: list[dict[tuple[str, int], list[VerifiedPair]]] = []
    for triple in fs.triples:
        buckets: dict[tuple[str, int], list[VerifiedPair]] = {}
        for vp in verified[triple]:
            buckets.setdefault((vp.pair.vid, vp.pair.fid), []).append(vp)
        grouped.append(buckets)

    common = set(grouped[0])
    for buckets in grouped[1:]:
        common &= set(buckets)

    out: list[FrameBinding] = []
    for vid, fid in sorted(common):
        partials: list[tuple[dict[str, int], float]] = [({}, math.inf)]
        for triple, buckets in zip(fs.triples, grouped):
            extended: dict[tuple, tuple[dict[str, int], float]] = {}
            for binding, confidence in partials:
                for vp in buckets[(vid, fid)]:
                    if binding.get(triple.subject_key, vp.pair.sid) != vp.pair.sid:
                        continue
                    if binding.get(triple.object_key, vp.pair.oid) != vp.pair.oid:
                        continue
                    merged = dict(binding)
                    merged[triple.subject_key] = vp.pair.sid
                    merged[triple.object_key] = vp.pair.oid
                    key = tuple(sorted(merged.items()))
                    extended.setdefault(key, (merged, min(confidence, vp.confidence)))
            partials = list(extended.values())
            if not partials:
                break
        for binding, confidence in partials:
            out.append(FrameBinding(vid, fid, binding, confidence))
    out.sort(key=lambda fb: (fb.vid, fb.fid, fb.binding_key))
    return out


def _compatible(base: Mapping[str, int], extra: Mapping[str, int]) -> bool:
    return all(base.get(k, v) == v for k, v in extra.items())


def match_temporal(
    per_frame: Sequence[Sequence[FrameBinding]],
    constraints: Sequence[TemporalConstraint],
    pmap: Callable | None = None,
) -> list[MatchSkeleton]:
    """All assignments of one FrameBinding per query frame, within a segment,
    with globally consistent entity bindings, strictly increasing frame ids,
    and every temporal constraint satisfied.

    Candidate lists are kept sorted by frame id; each partial assignment
    narrows the admissible fid interval of the next frame from the pairwise
    constraint bounds, and candidates outside it are skipped wholesale.
    The search is exhaustive within those bounds, hence complete.
    """
    m = len(per_frame)
    if m == 0:
        return []
    bounds = pair_difference_bounds(constraints, m)
    vids = sorted({fb.vid for bindings in per_frame for fb in bindings})

    def solve(vid: str) -> list[MatchSkeleton]:
        lists: list[list[FrameBinding]] = []
        for bindings in per_frame:
            mine = sorted(
                (fb for fb in bindings if fb.vid == vid),
                key=lambda fb: (fb.fid, fb.binding_key),
            )
            if not mine:
                return []
            lists.append(mine)
        fid_lists = [[fb.fid for fb in mine] for mine in lists]
        found: list[MatchSkeleton] = []

        def extend(index: int, chosen: list[FrameBinding], merged: dict[str, int]):
            if index == m:
                found.append(
                    MatchSkeleton(vid, tuple(fb.fid for fb in chosen), dict(merged))
                )
                return
            lo, hi = -math.inf, math.inf
            for j in range(index):
                blo, bhi = bounds[(j, index)]
                lo = max(lo, chosen[j].fid + blo)
                hi = min(hi, chosen[j].fid + bhi)
            if lo > hi:
                return
            start = 0 if lo == -math.inf else bisect_left(fid_lists[index], lo)
            for fb in lists[index][start:]:
                if fb.fid > hi:
                    break
                if _compatible(merged, fb.entity_bindings):
                    extend(index + 1, chosen + [fb], merged | fb.entity_bindings)

        extend(0, [], {})
        return found

    mapper = pmap if pmap is not None else lambda fn, items: [fn(x) for x in items]
    out: list[MatchSkeleton] = []
    for skeletons in mapper(solve, vids):
        out.extend(skeletons)
    return out


class QueryEngine:
    """Runs the full pipeline over the two stores and a pair of backends."""

    def __init__(
        self,
        entity_store: EntityStore,
        relationship_store: RelationshipStore,
        embedder,
        verifier: VerifierBackend,
        workers: int = 1,
        on_verifier_error: str = "drop",
    ):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if on_verifier_error not in ("drop", "abort"):
            raise ValueError("on_verifier_error must be 'drop' or 'abort'")
        self.entity_store = entity_store
        self.relationship_store = relationship_store
        self.embedder = embedder
        self.verifier = verifier
        self.workers = workers
        self.on_verifier_error = on_verifier_error

    def _pmap(self, fn, items: Sequence) -> list:
        if self.workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            return list(executor.map(fn, items))

    def match_entities(
        self, q: QuerySpec, params: HyperParams
    ) -> dict[str, list[EntityMatch]]:
        """One independent similarity search per declared query entity."""
        keys = [ent.key for ent in q.entities]
        texts = [ent.text for ent in q.entities]
        try:
            results = self._pmap(
                lambda text: self.entity_store.search(text, self.embedder, params), texts
            )
        except StageError:
            raise
        except Exception as exc:
            raise StageError("entity-matching", exc) from exc
        return dict(zip(keys, results))

    def execute_query(self, q: QuerySpec, params: HyperParams) -> ExecutionReport:
        """Run all stages and return ranked results plus per-stage metrics.

        Results are sorted by (score desc, vid asc, frame ids asc, bindings
        asc) and truncated to params.top_k. Raises QueryValidationError
        before any stage runs if the query is invalid, and StageError when
        a backend fails mid-pipeline.
        """
        report = validate_query(q)
        if not report.ok:
            raise QueryValidationError(list(report.errors))
        metrics = StageMetrics(workers=self.workers)

        started = time.perf_counter()
        matches = self.match_entities(q, params)
        metrics.entity_candidates = {key: len(found) for key, found in matches.items()}
        metrics.timings["entity-matching"] = time.perf_counter() - started
        lookup = {
            key: {(m.vid, m.eid): m for m in found} for key, found in matches.items()
        }

        started = time.perf_counter()
        triples = q.distinct_triples()

        def retrieve(triple: Triple) -> tuple[list, list, list[CandidatePair], list[str]]:
            subject_rows = self.relationship_store.candidate_frames(
                matches[triple.subject_key], "subject"
            )
            object_rows = self.relationship_store.candidate_frames(
                matches[triple.object_key], "object"
            )
            pairs = join_triple(
                subject_rows,
                object_rows,
                q.rel_text(triple.rel_key),
                self.embedder,
                params,
                lookup[triple.subject_key],
                lookup[triple.object_key],
            )
            label = f"({triple.subject_key},{triple.rel_key},{triple.object_key})"
            predicates = [
                filter_predicate(
                    matches[triple.subject_key], "subject", f"subject rows for {label}"
                ),
                filter_predicate(
                    matches[triple.object_key], "object", f"object rows for {label}"
                ),
            ]
            return subject_rows, object_rows, pairs, predicates

        try:
            retrieved = self._pmap(retrieve, triples)
        except StageError:
            raise
        except Exception as exc:
            raise StageError("candidate-retrieval", exc) from exc
        candidate_pairs: dict[Triple, list[CandidatePair]] = {}
        for triple, (subject_rows, object_rows, pairs, predicates) in zip(triples, retrieved):
            candidate_pairs[triple] = pairs
            metrics.predicates.extend(predicates)
            label = f"({triple.subject_key},{triple.rel_key},{triple.object_key})"
            metrics.triple_stats[label] = {
                "subject_rows": len(subject_rows),
                "object_rows": len(object_rows),
                "pairs": len(pairs),
            }
            metrics.coarse_pairs += len(pairs)
        distinct_keys = {
            (p.vid, p.fid, p.sid, p.oid, q.triple_text(t))
            for t, pairs in candidate_pairs.items()
            for p in pairs
        }
        metrics.distinct_pairs = len(distinct_keys)
        metrics.timings["candidate-retrieval"] = time.perf_counter() - started

        started = time.perf_counter()
        verified: dict[Triple, list[VerifiedPair]] = {}
        cache: dict = {}

        def frame_ref(vid: str, fid: int) -> str:
            return self.entity_store.segment(vid).frame_ref(fid)

        # every query frame must hold, so one pairless triple already decides
        # the outcome: skip verification entirely rather than spend model calls
        if any(not candidate_pairs[t] for t in triples):
            verified = {t: [] for t in triples}
            metrics.short_circuited = True
        else:
            for triple in triples:
                verified[triple], calls = refine_relationships(
                    candidate_pairs[triple],
                    q.triple_text(triple),
                    self.verifier,
                    frame_ref,
                    cache=cache,
                    workers=self.workers,
                    on_error=self.on_verifier_error,
                )
                metrics.verifier_calls += calls
        for triple in triples:
            label = f"({triple.subject_key},{triple.rel_key},{triple.object_key})"
            metrics.triple_stats[label]["verified"] = len(verified[triple])
            metrics.verified_pairs += len(verified[triple])
        metrics.timings["refinement"] = time.perf_counter() - started

        started = time.perf_counter()
        try:
            per_frame = self._pmap(lambda fs: conjoin_frame(fs, verified), q.frames)
        except Exception as exc:
            raise StageError("conjunction", exc) from exc
        metrics.frame_bindings = [len(bindings) for bindings in per_frame]
        metrics.timings["conjunction"] = time.perf_counter() - started

        started = time.perf_counter()
        skeletons = match_temporal(per_frame, q.temporal_constraints, pmap=self._pmap)
        metrics.timings["temporal-matching"] = time.perf_counter() - started

        started = time.perf_counter()
        confidence_of: dict[tuple, float] = {}
        for triple, vps in verified.items():
            for vp in vps:
                confidence_of[(triple, vp.pair.vid, vp.pair.fid, vp.pair.sid, vp.pair.oid)] = (
                    vp.confidence
                )
        results = []
        for skeleton in skeletons:
            evidence = []
            for frame in q.frames:
                fid = skeleton.fids[frame.frame_index]
                for triple in frame.triples:
                    confidence = confidence_of[
                        (
                            triple,
                            skeleton.vid,
                            fid,
                            skeleton.bindings[triple.subject_key],
                            skeleton.bindings[triple.object_key],
                        )
                    ]
                    evidence.append(TripleEvidence(frame.frame_index, triple, confidence))
            similarities = [
                _clamp01(lookup[key][(skeleton.vid, eid)].combined_score)
                for key, eid in sorted(skeleton.bindings.items())
            ]
            score = score_result(similarities, [ev.confidence for ev in evidence])
            results.append(
                MatchResult(
                    vid=skeleton.vid,
                    frame_assignment={i: f for i, f in enumerate(skeleton.fids)},
                    entity_bindings=skeleton.bindings,
                    triple_evidence=tuple(evidence),
                    score=score,
                )
            )
        metrics.results_before_top_k = len(results)
        results.sort(key=lambda r: (-r.score,) + r.identity())
        results = results[: params.top_k]
        metrics.timings["ranking"] = time.perf_counter() - started
        return ExecutionReport(tuple(results), metrics)
