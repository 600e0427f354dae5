/** Thin client for the service endpoints; the UI talks to nothing else. */

import type {
  DatasetDescriptor,
  Finding,
  HyperParams,
  QueryDocument,
  QueryPayload,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly findings: Finding[] = [],
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body = response.status === 204 ? null : await response.json();
    if (!response.ok) {
      const detail = (body as { detail?: unknown })?.detail;
      if (detail && typeof detail === "object" && "findings" in (detail as object)) {
        const d = detail as { message?: string; findings: Finding[] };
        throw new ServiceError(d.message ?? "validation failed", response.status, d.findings);
      }
      const message = typeof detail === "string" ? detail : JSON.stringify(body);
      throw new ServiceError(message, response.status);
    }
    return body;
  }

  async listDatasets(): Promise<DatasetDescriptor[]> {
    const body = (await this.request("/datasets")) as { datasets: DatasetDescriptor[] };
    return body.datasets;
  }

  async getDataset(id: string): Promise<DatasetDescriptor> {
    return (await this.request(`/datasets/${id}`)) as DatasetDescriptor;
  }

  async submitQuery(
    datasetId: string,
    query: QueryDocument,
    params: HyperParams,
  ): Promise<string> {
    const body = (await this.request(`/datasets/${datasetId}/queries`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ query, params }),
    })) as { query_id: string };
    return body.query_id;
  }

  async getQuery(queryId: string): Promise<QueryPayload> {
    return (await this.request(`/queries/${queryId}`)) as QueryPayload;
  }

  /** Poll until the query leaves the running state. */
  async waitForQuery(queryId: string, intervalMs = 150, timeoutMs = 60_000): Promise<QueryPayload> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const payload = await this.getQuery(queryId);
      if (payload.status !== "running") return payload;
      if (Date.now() > deadline) throw new ServiceError("query timed out", 408);
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  /** Server-side validation without execution (mirrors the local checks). */
  async validate(query: QueryDocument): Promise<{ ok: boolean; findings: Finding[] }> {
    return (await this.request("/validate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ query }),
    })) as { ok: boolean; findings: Finding[] };
  }
}
