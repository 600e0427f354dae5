/** DOM shell for the six-step query builder.
 *
 * The skeleton is built once; render() refreshes the dynamic regions
 * (lists, option sets, gating, findings, results) after every mutation,
 * so inputs keep focus and value. All interactive elements carry stable
 * ids/classes that the tests drive directly.
 */

import { ServiceClient } from "./api.js";
import { QueryDraft, STEP_TITLES, secondsToFrames } from "./draft.js";
import type { Finding, QueryPayload, TemporalOp } from "./types.js";

const OPS: TemporalOp[] = [">", ">=", "<", "<=", "="];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text) node.textContent = text;
  return node;
}

interface ListEntry {
  text: string;
  action: string;
  data: Record<string, string>;
}

function renderList<T>(target: Element, items: T[], describe: (item: T) => ListEntry): void {
  target.replaceChildren(
    ...items.map((item) => {
      const entry = describe(item);
      const li = el("li", {}, entry.text);
      const attrs: Record<string, string> = { "data-action": entry.action };
      for (const [key, value] of Object.entries(entry.data)) attrs[`data-${key}`] = value;
      li.append(" ", el("button", attrs, "remove"));
      return li;
    }),
  );
}

function refreshOptions(select: HTMLSelectElement, options: readonly (readonly [string, string])[]): void {
  const previous = select.value;
  select.replaceChildren(...options.map(([value, label]) => el("option", { value }, label)));
  if (options.some(([value]) => value === previous)) select.value = previous;
}

export class QueryBuilderApp {
  readonly draft = new QueryDraft();
  payload: QueryPayload | null = null;
  submitError: string | null = null;
  pending: Promise<void> = Promise.resolve();
  pollIntervalMs = 150;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ServiceClient,
  ) {
    this.buildSkeleton();
    this.wire();
  }

  async init(): Promise<void> {
    const datasets = await this.client.listDatasets();
    const select = this.q<HTMLSelectElement>("#dataset-select");
    select.replaceChildren(el("option", { value: "" }, "choose a dataset"));
    for (const d of datasets) {
      select.append(el("option", { value: d.dataset_id }, `${d.name} (${d.segment_count} segments)`));
    }
    this.render();
  }

  q<T extends Element>(selector: string): T {
    const node = this.root.querySelector(selector);
    if (!node) throw new Error(`missing element ${selector}`);
    return node as T;
  }

  private buildSkeleton(): void {
    this.root.replaceChildren();
    const sections = STEP_TITLES.map((title, index) => {
      const section = el("section", { id: `step-${index + 1}`, class: "step" });
      section.append(el("h2", {}, `Step ${index + 1}: ${title}`));
      return section;
    });

    const [s1, s2, s3, s4, s5, s6] = sections;

    s1.append(
      el("select", { id: "dataset-select" }),
      el("div", { id: "dataset-meta" }),
      labelled("top-k", el("input", { id: "param-top-k", type: "number", value: "10" })),
      labelled("temperature", el("input", { id: "param-temperature", type: "number", step: "0.05", value: "0" })),
      labelled("text threshold", el("input", { id: "param-text-threshold", type: "number", step: "0.05", value: "0.7" })),
      labelled("image threshold", el("input", { id: "param-image-threshold", type: "number", step: "0.05", value: "0.7" })),
    );
    s2.append(
      el("input", { id: "entity-input", placeholder: "e.g. man with backpack" }),
      el("button", { id: "entity-add" }, "Add entity"),
      el("ul", { id: "entity-list" }),
    );
    s3.append(
      el("input", { id: "rel-input", placeholder: "e.g. is near" }),
      el("button", { id: "rel-add" }, "Add relationship"),
      el("ul", { id: "rel-list" }),
    );
    s4.append(
      el("select", { id: "triple-subject" }),
      el("select", { id: "triple-rel" }),
      el("select", { id: "triple-object" }),
      el("button", { id: "triple-add" }, "Form triple"),
      el("ul", { id: "triple-list" }),
    );
    s5.append(
      el("button", { id: "frame-add" }, "Add frame"),
      el("div", { id: "frame-list" }),
      el("div", { id: "constraint-editor" }),
      el("ul", { id: "constraint-list" }),
    );
    s6.append(
      el("ul", { id: "findings" }),
      el("button", { id: "run-query" }, "Query"),
      el("div", { id: "query-status" }),
      el("div", { id: "results" }),
      el("div", { id: "metrics" }),
    );
    this.root.append(...sections);

    function labelled(text: string, input: HTMLElement): HTMLElement {
      const wrap = el("label", { class: "param" }, text + " ");
      wrap.append(input);
      return wrap;
    }
  }

  private wire(): void {
    this.q<HTMLSelectElement>("#dataset-select").addEventListener("change", () => {
      void this.onDatasetChosen();
    });
    for (const [id, field] of [
      ["#param-top-k", "top_k"],
      ["#param-temperature", "temperature"],
      ["#param-text-threshold", "text_threshold"],
      ["#param-image-threshold", "image_threshold"],
    ] as const) {
      this.q<HTMLInputElement>(id).addEventListener("change", (event) => {
        this.draft.setParams({ [field]: Number((event.target as HTMLInputElement).value) });
      });
    }
    this.q("#entity-add").addEventListener("click", () => {
      const input = this.q<HTMLInputElement>("#entity-input");
      if (input.value.trim()) {
        this.draft.addEntity(input.value);
        input.value = "";
        this.render();
      }
    });
    this.q("#rel-add").addEventListener("click", () => {
      const input = this.q<HTMLInputElement>("#rel-input");
      if (input.value.trim()) {
        this.draft.addRelationship(input.value);
        input.value = "";
        this.render();
      }
    });
    this.q("#triple-add").addEventListener("click", () => {
      const subject = this.q<HTMLSelectElement>("#triple-subject").value;
      const rel = this.q<HTMLSelectElement>("#triple-rel").value;
      const object = this.q<HTMLSelectElement>("#triple-object").value;
      if (subject && rel && object) {
        this.draft.addTriple(subject, rel, object);
        this.render();
      }
    });
    this.q("#frame-add").addEventListener("click", () => {
      this.draft.addFrame();
      this.render();
    });
    this.q("#run-query").addEventListener("click", () => {
      this.pending = this.runQuery();
    });

    // removals and per-frame controls are re-rendered, so delegate
    this.root.addEventListener("click", (event) => {
      const target = event.target as HTMLElement;
      const action = target.dataset.action;
      if (!action) return;
      if (action === "remove-entity") this.draft.removeEntity(target.dataset.key!);
      else if (action === "remove-rel") this.draft.removeRelationship(target.dataset.key!);
      else if (action === "remove-triple") this.draft.removeTriple(Number(target.dataset.id!));
      else if (action === "remove-frame") this.draft.removeFrame(Number(target.dataset.index!));
      else if (action === "remove-constraint")
        this.draft.removeConstraint(Number(target.dataset.index!));
      else if (action === "assign-triple") {
        const index = Number(target.dataset.index!);
        const select = this.root.querySelector<HTMLSelectElement>(
          `.frame[data-index="${index}"] select`,
        );
        if (select && select.value) this.draft.assignTriple(index, Number(select.value));
      } else if (action === "unassign-triple")
        this.draft.unassignTriple(Number(target.dataset.index!), Number(target.dataset.id!));
      else if (action === "add-constraint") {
        const later = Number(this.q<HTMLSelectElement>("#constraint-later").value);
        const earlier = Number(this.q<HTMLSelectElement>("#constraint-earlier").value);
        const op = this.q<HTMLSelectElement>("#constraint-op").value as TemporalOp;
        const seconds = Number(this.q<HTMLInputElement>("#constraint-seconds").value);
        if (!Number.isNaN(seconds)) this.draft.addConstraint(later, earlier, op, seconds);
      } else return;
      this.render();
    });
  }

  private async onDatasetChosen(): Promise<void> {
    const id = this.q<HTMLSelectElement>("#dataset-select").value;
    if (!id) return;
    const descriptor = await this.client.getDataset(id);
    const fps = (descriptor as unknown as { fps?: number }).fps ?? 2.0;
    this.draft.selectDataset(descriptor, fps);
    this.q("#dataset-meta").textContent =
      `${descriptor.segment_count} segments, ${descriptor.entity_count} entities, ` +
      `${descriptor.relationship_count} relationships @ ${fps} fps ` +
      `(preprocessed: ${descriptor.paths.preprocessed}, raw: ${descriptor.paths.raw})`;
    this.render();
  }

  async runQuery(): Promise<void> {
    if (!this.draft.canSubmit() || !this.draft.dataset) return;
    this.payload = null;
    this.submitError = null;
    this.q("#query-status").textContent = "running";
    try {
      const queryId = await this.client.submitQuery(
        this.draft.dataset.dataset_id,
        this.draft.toDocument(),
        this.draft.params,
      );
      this.payload = await this.client.waitForQuery(queryId, this.pollIntervalMs);
    } catch (error) {
      this.submitError = String(error);
    }
    this.render();
  }

  render(): void {
    const draft = this.draft;
    const open = draft.enabledSteps();
    open.forEach((enabled, index) => {
      this.q(`#step-${index + 1}`).classList.toggle("disabled", !enabled);
    });

    renderList(this.q("#entity-list"), draft.entities, (e) => ({
      text: `${e.key}: ${e.text}`,
      action: "remove-entity",
      data: { key: e.key },
    }));
    renderList(this.q("#rel-list"), draft.relationships, (r) => ({
      text: `${r.key}: ${r.text}`,
      action: "remove-rel",
      data: { key: r.key },
    }));

    const entityOptions = draft.entities.map((e) => [e.key, `${e.key}: ${e.text}`] as const);
    const relOptions = draft.relationships.map((r) => [r.key, `${r.key}: ${r.text}`] as const);
    refreshOptions(this.q("#triple-subject"), entityOptions);
    refreshOptions(this.q("#triple-rel"), relOptions);
    refreshOptions(this.q("#triple-object"), entityOptions);

    const broken = new Set(draft.brokenTriples().map((t) => t.id));
    const tripleList = this.q("#triple-list");
    tripleList.replaceChildren(
      ...draft.triples.map((t) => {
        const item = el("li", { "data-id": String(t.id) });
        if (broken.has(t.id)) item.classList.add("invalid");
        item.textContent = `#${t.id} (${t.subjectKey}, ${t.relKey}, ${t.objectKey})` +
          (broken.has(t.id) ? " — references a removed item" : "");
        const remove = el("button", { "data-action": "remove-triple", "data-id": String(t.id) }, "remove");
        item.append(" ", remove);
        return item;
      }),
    );

    const frameList = this.q("#frame-list");
    frameList.replaceChildren(
      ...draft.frames.map((frame, index) => {
        const wrap = el("div", { class: "frame", "data-index": String(index) });
        wrap.append(el("h3", {}, `Frame ${index}`));
        const select = el("select");
        for (const t of draft.triples) {
          select.append(el("option", { value: String(t.id) }, `#${t.id} (${t.subjectKey}, ${t.relKey}, ${t.objectKey})`));
        }
        wrap.append(
          select,
          el("button", { "data-action": "assign-triple", "data-index": String(index) }, "Assign triple"),
          el("button", { "data-action": "remove-frame", "data-index": String(index) }, "Remove frame"),
        );
        const assigned = el("ul", { class: "assigned" });
        for (const id of frame.tripleIds) {
          const item = el("li", { "data-id": String(id) }, `triple #${id}`);
          if (broken.has(id)) item.classList.add("invalid");
          item.append(
            " ",
            el(
              "button",
              { "data-action": "unassign-triple", "data-index": String(index), "data-id": String(id) },
              "remove",
            ),
          );
          assigned.append(item);
        }
        wrap.append(assigned);
        return wrap;
      }),
    );

    const editor = this.q("#constraint-editor");
    editor.replaceChildren();
    if (draft.frames.length >= 2) {
      const later = el("select", { id: "constraint-later" });
      const earlier = el("select", { id: "constraint-earlier" });
      draft.frames.forEach((_, index) => {
        later.append(el("option", { value: String(index) }, `frame ${index}`));
        earlier.append(el("option", { value: String(index) }, `frame ${index}`));
      });
      later.value = "1";
      earlier.value = "0";
      const op = el("select", { id: "constraint-op" });
      for (const o of OPS) op.append(el("option", { value: o }, o));
      editor.append(
        later,
        el("span", {}, " minus "),
        earlier,
        op,
        el("input", { id: "constraint-seconds", type: "number", step: "0.5", value: "2" }),
        el("span", {}, " seconds "),
        el("button", { "data-action": "add-constraint" }, "Add constraint"),
      );
    }
    const constraintList = this.q("#constraint-list");
    constraintList.replaceChildren(
      ...draft.constraints.map((c, index) =>
        (() => {
          const frames = secondsToFrames(c.seconds, draft.fps);
          const item = el(
            "li",
            {},
            `f${c.later} - f${c.earlier} ${c.op} ${c.seconds}s (= ${frames} frames)`,
          );
          item.append(
            " ",
            el("button", { "data-action": "remove-constraint", "data-index": String(index) }, "remove"),
          );
          return item;
        })(),
      ),
    );

    this.renderFindingsAndResults();
  }

  private renderFindingsAndResults(): void {
    const findings = this.draft.findings();
    const list = this.q("#findings");
    list.replaceChildren(
      ...findings.map((f: Finding) =>
        el("li", { class: f.severity, "data-code": f.code }, `${f.severity}: ${f.message}`),
      ),
    );
    const button = this.q<HTMLButtonElement>("#run-query");
    button.disabled = !this.draft.canSubmit();

    const status = this.q("#query-status");
    const results = this.q("#results");
    const metrics = this.q("#metrics");
    if (this.submitError) {
      status.textContent = `failed: ${this.submitError}`;
      return;
    }
    if (!this.payload) return;
    status.textContent =
      this.payload.status === "failed"
        ? `failed in ${this.payload.stage ?? "?"}: ${this.payload.error ?? ""}`
        : this.payload.status;
    if (this.payload.status !== "done") return;

    results.replaceChildren(
      el("h3", {}, `${(this.payload.results ?? []).length} result(s)`),
      ...(this.payload.results ?? []).map((r) => {
        const card = el("div", { class: "result", "data-vid": r.vid });
        card.append(el("strong", {}, `segment ${r.vid}`), el("span", {}, ` score ${r.score.toFixed(3)}`));
        const frames = el("ul", { class: "frames" });
        for (const [queryFrame, fid] of Object.entries(r.frames)) {
          frames.append(el("li", { "data-frame": queryFrame }, `query frame ${queryFrame} -> video frame ${fid}`));
        }
        const bindings = el("ul", { class: "bindings" });
        for (const [key, eid] of Object.entries(r.entities)) {
          bindings.append(el("li", {}, `${key} -> entity ${eid}`));
        }
        const evidence = el("ul", { class: "evidence" });
        for (const ev of r.evidence) {
          evidence.append(
            el(
              "li",
              {},
              `frame ${ev.frame}: (${ev.triple.join(", ")}) confidence ${ev.confidence.toFixed(2)}`,
            ),
          );
        }
        card.append(frames, bindings, evidence);
        return card;
      }),
    );

    const m = this.payload.metrics;
    if (m) {
      metrics.replaceChildren(
        el("h3", {}, "Stage metrics (pruning)"),
        el(
          "ul",
          { id: "metrics-list" },
          "",
        ),
      );
      const list = this.q("#metrics-list");
      const rows = [
        `entity candidates: ${Object.entries(m.entity_candidates).map(([k, v]) => `${k}=${v}`).join(", ")}`,
        `coarse candidate pairs: ${m.coarse_pairs} (${m.distinct_pairs} distinct)`,
        `verifier calls: ${m.verifier_calls}`,
        `verified pairs: ${m.verified_pairs}`,
        `frame bindings: ${m.frame_bindings.join(", ")}`,
        `results before top-k: ${m.results_before_top_k}`,
        `short-circuited: ${m.short_circuited}`,
        `timings: ${Object.entries(m.timings).map(([k, v]) => `${k}=${v.toFixed(3)}s`).join(", ")}`,
      ];
      list.replaceChildren(...rows.map((text) => el("li", {}, text)));
    }
  }
}
