"""vidmoment: hybrid relational/vector retrieval of multi-frame video moments.

Scene-graph views of segmented video are ingested into an entity store
(embedding vectors) and a relationship store (per-frame SPO rows). Event
queries are decomposed into vector similarity search, relational joins,
verifier-based refinement, and temporal constraint matching.
"""

from .backends import (
    GroundTruthSidecar,
    MockEmbedder,
    MockVerifier,
    RemoteEmbedder,
    RemoteVerifier,
    VerifierRequest,
)
from .engine import (
    ExecutionReport,
    FrameBinding,
    QueryEngine,
    StageError,
    VerifiedPair,
    conjoin_frame,
    match_temporal,
    refine_relationships,
    score_result,
)
from .entity_store import EntityMatch, EntityStore, cosine_similarity
from .ingest import (
    Detection,
    IngestStats,
    SceneGraphDocument,
    SceneGraphError,
    ingest_scene_graph,
    parse_scene_graph,
    segment_frames,
    upsert_segment,
)
from .model import (
    EntityRecord,
    FrameSpec,
    HyperParams,
    MatchResult,
    QueryEntity,
    QueryRelationship,
    QuerySpec,
    QueryValidationError,
    RelationshipRow,
    TemporalConstraint,
    Triple,
    VideoSegment,
    parse_query,
    serialize_query,
    validate_query,
)
from .relationship_store import CandidatePair, RelationshipStore, join_triple

__version__ = "0.1.0"
