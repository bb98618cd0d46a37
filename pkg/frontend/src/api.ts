import type { CEResult, Health, RawRow, RowsResponse, Schema } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export interface GeneratePayload {
  query: RawRow;
  target: number;
  tol?: number;
  steps?: number;
}

async function raiseFor(res: Response): Promise<never> {
  let message = `HTTP ${res.status}`;
  try {
    const body = (await res.json()) as { error?: unknown };
    if (typeof body.error === "string") message = body.error;
  } catch {
    // body was not JSON; keep the status message
  }
  throw new ApiError(res.status, message);
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.base + path);
    if (!res.ok) await raiseFor(res);
    return (await res.json()) as T;
  }

  schema(): Promise<Schema> {
    return this.getJson<Schema>("/api/schema");
  }

  health(): Promise<Health> {
    return this.getJson<Health>("/api/health");
  }

  rows(limit: number): Promise<RowsResponse> {
    return this.getJson<RowsResponse>(`/api/rows?split=test&limit=${limit}`);
  }

  async generate(payload: GeneratePayload): Promise<CEResult> {
    const res = await fetch(this.base + "/api/generate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) await raiseFor(res);
    return (await res.json()) as CEResult;
  }
}
