/** Client-side validation mirroring the engine's checks, finding for
 * finding, so the UI never submits a document the server would reject. */

import type { Finding, QueryDocument, TemporalOp } from "./types.js";

function interval(op: TemporalOp, bound: number): [number, number] {
  switch (op) {
    case ">":
      return [bound + 1, Infinity];
    case ">=":
      return [bound, Infinity];
    case "<":
      return [-Infinity, bound - 1];
    case "<=":
      return [-Infinity, bound];
    case "=":
      return [bound, bound];
  }
}

/** Bellman-Ford negative-cycle test over the difference-constraint graph,
 * including the implicit ordering edges between consecutive frames. */
function chainUnsatisfiable(doc: QueryDocument): boolean {
  const n = doc.frames.length;
  const edges: [number, number, number][] = [];
  for (let i = 0; i + 1 < n; i++) edges.push([i + 1, i, -1]);
  for (const c of doc.temporal) {
    const [lo, hi] = interval(c.op, c.bound);
    if (Number.isFinite(hi)) edges.push([c.earlier, c.later, hi]);
    if (Number.isFinite(lo)) edges.push([c.later, c.earlier, -lo]);
  }
  const dist = new Array<number>(n).fill(0);
  let changed = false;
  for (let round = 0; round < n; round++) {
    changed = false;
    for (const [u, v, w] of edges) {
      if (dist[u] + w < dist[v]) {
        dist[v] = dist[u] + w;
        changed = true;
      }
    }
    if (!changed) return false;
  }
  return changed;
}

export function validateDocument(doc: QueryDocument): Finding[] {
  const findings: Finding[] = [];
  const error = (code: string, message: string) =>
    findings.push({ code, message, severity: "error" });
  const warning = (code: string, message: string) =>
    findings.push({ code, message, severity: "warning" });

  const entityKeys = new Set<string>();
  for (const ent of doc.entities) {
    if (entityKeys.has(ent.key)) error("duplicate-entity-key", `duplicate entity key '${ent.key}'`);
    entityKeys.add(ent.key);
    if (!ent.text) error("empty-entity-text", `entity '${ent.key}' has empty text`);
  }
  const relKeys = new Set<string>();
  for (const rel of doc.relationships) {
    if (relKeys.has(rel.key))
      error("duplicate-relationship-key", `duplicate relationship key '${rel.key}'`);
    relKeys.add(rel.key);
    if (!rel.text) error("empty-relationship-text", `relationship '${rel.key}' has empty text`);
  }

  if (doc.frames.length === 0) error("empty-frames", "frames list is empty");

  const usedEntities = new Set<string>();
  const usedRels = new Set<string>();
  doc.frames.forEach((frame, pos) => {
    if (frame.index !== pos)
      error("bad-frame-index", `frame at position ${pos} carries index ${frame.index}`);
    if (frame.triples.length === 0) error("empty-frame", `empty frame spec at index ${pos}`);
    for (const [s, r, o] of frame.triples) {
      for (const key of [s, o]) {
        if (!entityKeys.has(key))
          error("unknown-entity-key", `frame ${pos}: triple references undeclared entity '${key}'`);
      }
      if (!relKeys.has(r))
        error(
          "unknown-relationship-key",
          `frame ${pos}: triple references undeclared relationship '${r}'`,
        );
      if (s === o) error("subject-equals-object", `frame ${pos}: subject equals object ('${s}')`);
      usedEntities.add(s);
      usedEntities.add(o);
      usedRels.add(r);
    }
  });

  const n = doc.frames.length;
  let constraintsOk = true;
  for (const c of doc.temporal) {
    if (c.later === c.earlier) {
      error("constraint-self-reference", "temporal constraint relates a frame to itself");
      constraintsOk = false;
    }
    for (const index of [c.later, c.earlier]) {
      if (index < 0 || index >= n) {
        error(
          "constraint-index-out-of-range",
          `temporal constraint references frame index ${index} (frames: ${n})`,
        );
        constraintsOk = false;
      }
    }
  }

  if (constraintsOk && n > 0 && doc.temporal.length > 0) {
    // pairwise interval intersection on fid(j) - fid(i) for i < j, seeded
    // with the implicit ordering bound (j - i)
    const bounds = new Map<string, [number, number]>();
    const key = (i: number, j: number) => `${i}:${j}`;
    for (let i = 0; i < n; i++)
      for (let j = i + 1; j < n; j++) bounds.set(key(i, j), [j - i, Infinity]);
    for (const c of doc.temporal) {
      let [lo, hi] = interval(c.op, c.bound);
      let [i, j] = [c.earlier, c.later];
      if (i > j) {
        [i, j] = [j, i];
        [lo, hi] = [-hi, -lo];
      }
      const cur = bounds.get(key(i, j))!;
      bounds.set(key(i, j), [Math.max(cur[0], lo), Math.min(cur[1], hi)]);
    }
    const infeasible = [...bounds.entries()].filter(([, [lo, hi]]) => lo > hi);
    if (infeasible.length > 0) {
      const pairs = infeasible
        .map(([k]) => k.split(":"))
        .map(([i, j]) => `f${j}-f${i}`)
        .join(", ");
      error("unsatisfiable-temporal", `unsatisfiable constraint set on ${pairs}`);
    } else if (chainUnsatisfiable(doc)) {
      error(
        "unsatisfiable-temporal",
        "unsatisfiable constraint set (contradictory chain of frame differences)",
      );
    }
  }

  for (const ent of doc.entities) {
    if (!usedEntities.has(ent.key))
      warning("unused-entity", `entity '${ent.key}' is never used in a triple`);
  }
  for (const rel of doc.relationships) {
    if (!usedRels.has(rel.key))
      warning("unused-relationship", `relationship '${rel.key}' is never used in a triple`);
  }
  return findings;
}

export function hasErrors(findings: Finding[]): boolean {
  return findings.some((f) => f.severity === "error");
}
