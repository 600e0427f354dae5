"""Query document parsing, serialization, and validation."""

import dataclasses
import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import EXAMPLE_QUERY_DOC
from vidmoment.model import (
    FrameSpec,
    HyperParams,
    QueryEntity,
    QueryFormatError,
    QueryRelationship,
    QuerySpec,
    QueryValidationError,
    TemporalConstraint,
    Triple,
    constraint_interval,
    pair_difference_bounds,
    parse_query,
    serialize_query,
    validate_query,
)


def make_spec(constraints=(), frames=None):
    entities = (
        QueryEntity("e1", "man with backpack"),
        QueryEntity("e2", "bicycle"),
        QueryEntity("e3", "man in red"),
    )
    relationships = (QueryRelationship("r1", "is near"), QueryRelationship("r2", "leftOf"))
    if frames is None:
        frames = (
            FrameSpec(0, (Triple("e1", "r1", "e2"), Triple("e3", "r2", "e2"))),
            FrameSpec(1, (Triple("e1", "r1", "e2"),)),
        )
    return QuerySpec(entities, relationships, frames, tuple(constraints))


class TestParse:
    def test_example_document(self):
        spec = parse_query(EXAMPLE_QUERY_DOC)
        assert len(spec.entities) == 3
        assert len(spec.relationships) == 3
        assert len(spec.frames) == 2
        assert len(spec.temporal_constraints) == 1
        con = spec.temporal_constraints[0]
        assert (con.later_index, con.earlier_index, con.op, con.bound) == (1, 0, ">", 4)
        assert spec.frames[0].triples == (Triple("e1", "r1", "e2"), Triple("e3", "r2", "e2"))

    def test_syntax_error_reports_position(self):
        with pytest.raises(QueryFormatError) as err:
            parse_query('{"entities": [}')
        assert err.value.position is not None

    def test_empty_frame_spec_rejected(self):
        doc = json.dumps(
            {
                "entities": [{"key": "e1", "text": "dog"}],
                "relationships": [],
                "frames": [{"index": 0, "triples": []}],
            }
        )
        with pytest.raises(QueryValidationError) as err:
            parse_query(doc)
        assert any(f.code == "empty-frame" for f in err.value.findings)

    def test_empty_frames_list_rejected(self):
        doc = json.dumps(
            {"entities": [{"key": "e1", "text": "dog"}], "relationships": [], "frames": []}
        )
        with pytest.raises(QueryValidationError) as err:
            parse_query(doc)
        assert any(f.code == "empty-frames" for f in err.value.findings)

    def test_undeclared_key_rejected(self):
        doc = json.dumps(
            {
                "entities": [{"key": "e1", "text": "dog"}, {"key": "e2", "text": "bus"}],
                "relationships": [{"key": "r1", "text": "near"}],
                "frames": [{"index": 0, "triples": [["e1", "r1", "ghost"]]}],
            }
        )
        with pytest.raises(QueryValidationError) as err:
            parse_query(doc)
        assert any(f.code == "unknown-entity-key" for f in err.value.findings)

    def test_duplicate_key_rejected(self):
        doc = json.dumps(
            {
                "entities": [{"key": "e1", "text": "dog"}, {"key": "e1", "text": "bus"}],
                "relationships": [{"key": "r1", "text": "near"}],
                "frames": [{"index": 0, "triples": [["e1", "r1", "e1"]]}],
            }
        )
        with pytest.raises(QueryValidationError) as err:
            parse_query(doc)
        assert any(f.code == "duplicate-entity-key" for f in err.value.findings)

    def test_unknown_section_rejected(self):
        with pytest.raises(QueryFormatError):
            parse_query('{"entities": [], "relationships": [], "frames": [], "tripels": []}')

    def test_bad_op_rejected(self):
        doc = json.dumps(
            {
                "entities": [{"key": "e1", "text": "a"}, {"key": "e2", "text": "b"}],
                "relationships": [{"key": "r1", "text": "near"}],
                "frames": [{"index": 0, "triples": [["e1", "r1", "e2"]]}],
                "temporal": [{"later": 0, "earlier": 0, "op": "!=", "bound": 1}],
            }
        )
        with pytest.raises(QueryFormatError):
            parse_query(doc)

    def test_duplicate_triples_within_frame_collapse(self):
        doc = json.dumps(
            {
                "entities": [{"key": "e1", "text": "a"}, {"key": "e2", "text": "b"}],
                "relationships": [{"key": "r1", "text": "near"}],
                "frames": [{"index": 0, "triples": [["e1", "r1", "e2"], ["e1", "r1", "e2"]]}],
            }
        )
        assert parse_query(doc).frames[0].triples == (Triple("e1", "r1", "e2"),)


def random_document(rng: random.Random) -> str:
    """A random valid query document (via a spec, rendered to text)."""
    n_ent = rng.randint(2, 6)
    entities = tuple(
        QueryEntity(f"e{i}", rng.choice(["dog", "red car", "person", "kiosk", "bench"]) + f" #{i}")
        for i in range(1, n_ent + 1)
    )
    relationships = tuple(
        QueryRelationship(f"r{i}", rng.choice(["near", "behind", "leftOf", "holding"]))
        for i in range(1, rng.randint(2, 4))
    )
    frames = []
    n_frames = rng.randint(1, 4)
    for index in range(n_frames):
        triples = {}
        for _ in range(rng.randint(1, 3)):
            s, o = rng.sample(range(n_ent), 2)
            r = rng.randrange(len(relationships))
            triples.setdefault(Triple(f"e{s + 1}", f"r{r + 1}", f"e{o + 1}"))
        frames.append(FrameSpec(index, tuple(triples)))
    while True:
        constraints = []
        for _ in range(rng.randint(0, 2)):
            if n_frames < 2:
                break
            later, earlier = rng.sample(range(n_frames), 2)
            constraints.append(
                TemporalConstraint(later, earlier, rng.choice(["<", "<=", ">", ">=", "="]),
                                   rng.randint(-4, 9))
            )
        spec = QuerySpec(entities, relationships, tuple(frames), tuple(constraints))
        if validate_query(spec).ok:
            return serialize_query(spec)


class TestRoundTrip:
    def test_hundred_random_documents(self):
        rng = random.Random(4242)
        for _ in range(100):
            doc = random_document(rng)
            spec = parse_query(doc)
            again = parse_query(serialize_query(spec))
            assert again == spec

    @settings(max_examples=120, deadline=None)
    @given(st.data())
    def test_parse_serialize_identity(self, data):
        n_ent = data.draw(st.integers(2, 5))
        text = st.text(
            alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FA0), min_size=1, max_size=20
        )
        entities = tuple(QueryEntity(f"e{i}", data.draw(text)) for i in range(1, n_ent + 1))
        relationships = tuple(QueryRelationship(f"r{i}", data.draw(text)) for i in range(1, 3))
        frames = []
        for index in range(data.draw(st.integers(1, 3))):
            triples = {}
            for _ in range(data.draw(st.integers(1, 3))):
                s = data.draw(st.integers(1, n_ent))
                o = data.draw(st.integers(1, n_ent).filter(lambda x: x != s))
                triples.setdefault(Triple(f"e{s}", f"r{data.draw(st.integers(1, 2))}", f"e{o}"))
            frames.append(FrameSpec(index, tuple(triples)))
        spec = QuerySpec(entities, relationships, tuple(frames), ())
        assert parse_query(serialize_query(spec)) == spec


class TestValidate:
    def test_example_query_is_clean(self):
        report = validate_query(parse_query(EXAMPLE_QUERY_DOC))
        assert report.ok
        assert not report.findings  # no warnings either: every key is used

    def test_self_referential_triple(self):
        spec = make_spec(frames=(FrameSpec(0, (Triple("e1", "r1", "e1"),)),))
        report = validate_query(spec)
        assert any(f.code == "subject-equals-object" for f in report.errors)

    def test_unsatisfiable_pair_matches_interval_oracle(self):
        constraints = (
            TemporalConstraint(1, 0, ">", 4),
            TemporalConstraint(1, 0, "<=", 3),
        )
        report = validate_query(make_spec(constraints))
        assert any(f.code == "unsatisfiable-temporal" for f in report.errors)
        # independent interval-arithmetic check: [5, inf) and (-inf, 3] are disjoint
        lo1, hi1 = constraint_interval(">", 4)
        lo2, hi2 = constraint_interval("<=", 3)
        assert max(lo1, lo2) > min(hi1, hi2)

    def test_satisfiable_pair_accepted(self):
        report = validate_query(make_spec((TemporalConstraint(1, 0, ">", 4),)))
        assert report.ok

    def test_chained_contradiction_detected(self):
        frames = tuple(FrameSpec(i, (Triple("e1", "r1", "e2"),)) for i in range(3))
        constraints = (
            TemporalConstraint(1, 0, ">", 2),
            TemporalConstraint(2, 1, ">", 2),
            TemporalConstraint(2, 0, "<", 4),
        )
        report = validate_query(make_spec(constraints, frames=frames))
        assert any(f.code == "unsatisfiable-temporal" for f in report.errors)

    def test_implicit_ordering_contradiction(self):
        report = validate_query(make_spec((TemporalConstraint(1, 0, "<=", 0),)))
        assert any(f.code == "unsatisfiable-temporal" for f in report.errors)

    def test_constraint_index_out_of_range(self):
        report = validate_query(make_spec((TemporalConstraint(5, 0, ">", 1),)))
        assert any(f.code == "constraint-index-out-of-range" for f in report.errors)

    def test_unused_entity_is_warning_only(self):
        spec = make_spec(frames=(FrameSpec(0, (Triple("e1", "r1", "e2"),)),))
        report = validate_query(spec)
        assert report.ok
        assert any(f.code == "unused-entity" for f in report.warnings)

    @pytest.mark.parametrize("mutation", range(6))
    def test_single_mutations_always_flagged(self, mutation, rng):
        for _ in range(25):
            spec = parse_query(random_document(rng))
            frames = list(spec.frames)
            first = frames[0]
            if mutation == 0:  # undeclared subject key
                bad = dataclasses.replace(first.triples[0], subject_key="zz")
                frames[0] = FrameSpec(0, (bad,) + first.triples[1:])
                mutated = dataclasses.replace(spec, frames=tuple(frames))
            elif mutation == 1:  # self-referential triple
                t = first.triples[0]
                bad = dataclasses.replace(t, object_key=t.subject_key)
                frames[0] = FrameSpec(0, (bad,) + first.triples[1:])
                mutated = dataclasses.replace(spec, frames=tuple(frames))
            elif mutation == 2:  # constraint index out of range
                mutated = dataclasses.replace(
                    spec,
                    temporal_constraints=(TemporalConstraint(len(spec.frames), 0, ">", 1),),
                )
            elif mutation == 3:  # contradictory pair
                if len(spec.frames) < 2:
                    continue
                mutated = dataclasses.replace(
                    spec,
                    temporal_constraints=(
                        TemporalConstraint(1, 0, ">", 4),
                        TemporalConstraint(1, 0, "<", 2),
                    ),
                )
            elif mutation == 4:  # empty frame spec
                frames[0] = FrameSpec(0, ())
                mutated = dataclasses.replace(spec, frames=tuple(frames))
            else:  # duplicate entity key
                mutated = dataclasses.replace(
                    spec, entities=spec.entities + (QueryEntity(spec.entities[0].key, "dup"),)
                )
            assert validate_query(mutated).errors, f"mutation {mutation} produced no finding"


class TestDifferenceBounds:
    def test_implicit_ordering_baseline(self):
        bounds = pair_difference_bounds((), 3)
        assert bounds[(0, 1)] == (1, math.inf)
        assert bounds[(0, 2)] == (2, math.inf)

    def test_reversed_pair_normalized(self):
        # fid(0) - fid(1) >= -5 written against the reversed pair
        bounds = pair_difference_bounds((TemporalConstraint(0, 1, ">=", -5),), 2)
        assert bounds[(0, 1)] == (1, 5)

    def test_equality_op(self):
        bounds = pair_difference_bounds((TemporalConstraint(1, 0, "=", 7),), 2)
        assert bounds[(0, 1)] == (7, 7)


class TestHyperParams:
    def test_defaults_are_valid(self):
        params = HyperParams()
        assert params.top_k >= 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"top_k": 0},
            {"temperature": 1.0},
            {"temperature": -0.1},
            {"text_threshold": 1.5},
            {"image_threshold": -0.2},
            {"rel_label_threshold": 2.0},
        ],
    )
    def test_out_of_range_rejected(self, kwargs):
        with pytest.raises(ValueError):
            HyperParams(**kwargs)

    def test_effective_threshold_relaxation(self):
        params = HyperParams(text_threshold=0.8, temperature=0.25)
        assert params.effective_text_threshold() == pytest.approx(0.6)
