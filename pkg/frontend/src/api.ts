/** Typed client for the risk service's /v1 HTTP API.
 *
 * The UI consumes only these endpoints; all state changes flow through
 * POST /v1/feedback. Every function returns the parsed JSON body or throws
 * an ApiError carrying the service's {code, message, details} envelope.
 */

export interface QueueItem {
  change_id: string;
  score: number;
  band: "low" | "medium" | "high";
  classified_high_risk: boolean | null;
  label_if_known: number | null;
  model_version: string;
}

export interface QueueResponse {
  items: QueueItem[];
  threshold: number | null;
  counts: { total: number; flagged: number };
}

export interface AttributionEntry {
  feature: string;
  value: number;
  component: string | null;
}

export interface ScoreResponse {
  change_id: string;
  score: number;
  band: "low" | "medium" | "high";
  classified_high_risk: boolean;
  top_attributions: AttributionEntry[];
  base_value: number;
  model_version: string;
}

export type Verdict = "useful" | "not_useful";
export type Decision = "approve" | "reject" | "flag";

export interface FeedbackBody {
  change_id: string;
  verdict: Verdict;
  decision: Decision;
  reviewer: string;
}

export interface FeedbackAck extends FeedbackBody {
  seq: number;
  timestamp: string;
  model_version: string | null;
}

export interface WindowReport {
  window_id: string;
  weighted_recall: number;
  weighted_fbeta: number;
  precision?: number;
  auc?: number | null;
  degenerate?: boolean;
}

export interface ModelInfo {
  active: {
    model_version: string;
    threshold: number;
    schema_fingerprint: string;
    training_range: string[];
  } | null;
  registry: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public details: unknown = {},
  ) {
    super(message);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(base + path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const err = body as { code?: string; message?: string; details?: unknown };
    throw new ApiError(resp.status, err.code ?? "http_error", err.message ?? resp.statusText, err.details);
  }
  return body as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  getQueue(start: string, end: string, threshold?: number): Promise<QueueResponse> {
    const params = new URLSearchParams({ start, end });
    if (threshold !== undefined) params.set("threshold", String(threshold));
    return request<QueueResponse>(this.base, `/v1/queue?${params}`);
  }

  score(change: Record<string, unknown>): Promise<ScoreResponse> {
    return request<ScoreResponse>(this.base, "/v1/score", {
      method: "POST",
      body: JSON.stringify(change),
    });
  }

  postFeedback(body: FeedbackBody): Promise<FeedbackAck> {
    return request<FeedbackAck>(this.base, "/v1/feedback", {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  getWindows(): Promise<{ windows: WindowReport[] }> {
    return request<{ windows: WindowReport[] }>(this.base, "/v1/metrics/windows");
  }

  getModel(): Promise<ModelInfo> {
    return request<ModelInfo>(this.base, "/v1/model");
  }
}
