/** The query draft: what the user has entered so far, which steps are
 * open, and how the draft serializes to the query-document format.
 *
 * Entities and relationships get stable generated keys (e1.., r1..).
 * Triples reference those keys; frames reference triples by draft id, so
 * one triple can appear in several frames. Temporal constraints are
 * entered in seconds and converted to frames with the dataset's fps at
 * serialization time. Anything can be removed at any step; a removal that
 * orphans a reference flags the referring item instead of cascading, and
 * submission stays blocked until the draft is consistent again.
 */

import type {
  DatasetDescriptor,
  Finding,
  HyperParams,
  QueryDocument,
  TemporalOp,
} from "./types.js";
import { hasErrors, validateDocument } from "./validate.js";

export interface DraftEntity {
  key: string;
  text: string;
}

export interface DraftTriple {
  id: number;
  subjectKey: string;
  relKey: string;
  objectKey: string;
}

export interface DraftFrame {
  tripleIds: number[];
}

export interface DraftConstraint {
  later: number;
  earlier: number;
  op: TemporalOp;
  seconds: number;
}

export const STEP_TITLES = [
  "Load dataset and enter hyperparameters",
  "Enter entities",
  "Enter relationships",
  "Enter triples",
  "Enter frames and temporal constraints",
  "Query execution and results",
] as const;

export function secondsToFrames(seconds: number, fps: number): number {
  return Math.round(seconds * fps);
}

const DEFAULT_PARAMS: HyperParams = {
  top_k: 10,
  temperature: 0,
  text_threshold: 0.7,
  image_threshold: 0.7,
  rel_label_threshold: null,
};

export class QueryDraft {
  dataset: DatasetDescriptor | null = null;
  fps = 2.0;
  params: HyperParams = { ...DEFAULT_PARAMS };
  entities: DraftEntity[] = [];
  relationships: DraftEntity[] = [];
  triples: DraftTriple[] = [];
  frames: DraftFrame[] = [];
  constraints: DraftConstraint[] = [];
  private nextEntity = 1;
  private nextRel = 1;
  private nextTriple = 1;

  // -- step 1 ---------------------------------------------------------------

  selectDataset(dataset: DatasetDescriptor, fps: number): void {
    this.dataset = dataset;
    this.fps = fps;
  }

  setParams(params: Partial<HyperParams>): void {
    this.params = { ...this.params, ...params };
  }

  // -- steps 2 and 3 ----------------------------------------------------------

  addEntity(text: string): DraftEntity {
    const entity = { key: `e${this.nextEntity++}`, text: text.trim() };
    this.entities.push(entity);
    return entity;
  }

  removeEntity(key: string): void {
    this.entities = this.entities.filter((e) => e.key !== key);
  }

  addRelationship(text: string): DraftEntity {
    const rel = { key: `r${this.nextRel++}`, text: text.trim() };
    this.relationships.push(rel);
    return rel;
  }

  removeRelationship(key: string): void {
    this.relationships = this.relationships.filter((r) => r.key !== key);
  }

  // -- step 4 -----------------------------------------------------------------

  addTriple(subjectKey: string, relKey: string, objectKey: string): DraftTriple {
    const triple = { id: this.nextTriple++, subjectKey, relKey, objectKey };
    this.triples.push(triple);
    return triple;
  }

  removeTriple(id: number): void {
    this.triples = this.triples.filter((t) => t.id !== id);
  }

  /** A triple is broken when a key it references has been removed. */
  brokenTriples(): DraftTriple[] {
    const entityKeys = new Set(this.entities.map((e) => e.key));
    const relKeys = new Set(this.relationships.map((r) => r.key));
    return this.triples.filter(
      (t) =>
        !entityKeys.has(t.subjectKey) ||
        !entityKeys.has(t.objectKey) ||
        !relKeys.has(t.relKey) ||
        t.subjectKey === t.objectKey,
    );
  }

  // -- step 5 -----------------------------------------------------------------

  addFrame(): number {
    this.frames.push({ tripleIds: [] });
    return this.frames.length - 1;
  }

  removeFrame(index: number): void {
    this.frames.splice(index, 1);
    this.constraints = this.constraints.filter(
      (c) => c.later !== index && c.earlier !== index,
    );
    for (const c of this.constraints) {
      if (c.later > index) c.later -= 1;
      if (c.earlier > index) c.earlier -= 1;
    }
  }

  assignTriple(frameIndex: number, tripleId: number): void {
    const frame = this.frames[frameIndex];
    if (frame && !frame.tripleIds.includes(tripleId)) frame.tripleIds.push(tripleId);
  }

  unassignTriple(frameIndex: number, tripleId: number): void {
    const frame = this.frames[frameIndex];
    if (frame) frame.tripleIds = frame.tripleIds.filter((id) => id !== tripleId);
  }

  addConstraint(later: number, earlier: number, op: TemporalOp, seconds: number): void {
    this.constraints.push({ later, earlier, op, seconds });
  }

  removeConstraint(index: number): void {
    this.constraints.splice(index, 1);
  }

  // -- gating and submission ----------------------------------------------------

  /** Highest step (0-based) the user may currently work in. */
  enabledSteps(): boolean[] {
    const open = [true, false, false, false, false, false];
    open[1] = this.dataset !== null;
    open[2] = open[1] && this.entities.length > 0;
    open[3] = open[2] && this.relationships.length > 0;
    open[4] = open[3] && this.triples.length > 0;
    open[5] = open[4] && this.frames.length > 0;
    return open;
  }

  toDocument(): QueryDocument {
    const byId = new Map(this.triples.map((t) => [t.id, t]));
    return {
      entities: this.entities.map((e) => ({ key: e.key, text: e.text })),
      relationships: this.relationships.map((r) => ({ key: r.key, text: r.text })),
      frames: this.frames.map((frame, index) => ({
        index,
        triples: frame.tripleIds
          .map((id) => byId.get(id))
          .filter((t): t is DraftTriple => t !== undefined)
          .map((t) => [t.subjectKey, t.relKey, t.objectKey] as [string, string, string]),
      })),
      temporal: this.constraints.map((c) => ({
        later: c.later,
        earlier: c.earlier,
        op: c.op,
        bound: secondsToFrames(c.seconds, this.fps),
      })),
    };
  }

  findings(): Finding[] {
    return validateDocument(this.toDocument());
  }

  canSubmit(): boolean {
    return this.dataset !== null && this.frames.length > 0 && !hasErrors(this.findings());
  }
}
