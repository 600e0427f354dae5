/** Wire types mirroring the service's request/response payloads. */

export type TemporalOp = "<" | "<=" | ">" | ">=" | "=";

export interface QueryDocument {
  entities: { key: string; text: string }[];
  relationships: { key: string; text: string }[];
  frames: { index: number; triples: [string, string, string][] }[];
  temporal: { later: number; earlier: number; op: TemporalOp; bound: number }[];
}

export interface HyperParams {
  top_k: number;
  temperature: number;
  text_threshold: number;
  image_threshold: number;
  rel_label_threshold?: number | null;
}

export interface DatasetDescriptor {
  dataset_id: string;
  name: string;
  segment_count: number;
  entity_count: number;
  relationship_count: number;
  paths: { preprocessed: string; raw: string };
}

export interface TripleEvidence {
  frame: number;
  triple: [string, string, string];
  confidence: number;
}

export interface MatchResultPayload {
  vid: string;
  frames: Record<string, number>;
  entities: Record<string, number>;
  evidence: TripleEvidence[];
  score: number;
}

export interface StageMetricsPayload {
  entity_candidates: Record<string, number>;
  triple_stats: Record<string, Record<string, number>>;
  coarse_pairs: number;
  distinct_pairs: number;
  verifier_calls: number;
  verified_pairs: number;
  frame_bindings: number[];
  results_before_top_k: number;
  timings: Record<string, number>;
  workers: number;
  short_circuited: boolean;
}

export type QueryStatus = "running" | "done" | "failed";

export interface QueryPayload {
  status: QueryStatus;
  results?: MatchResultPayload[];
  metrics?: StageMetricsPayload;
  error?: string;
  stage?: string;
}

export interface Finding {
  code: string;
  message: string;
  severity: "error" | "warning";
}
