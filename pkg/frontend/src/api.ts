/** Thin typed client for the engine API. The dashboard renders responses
 * verbatim; no fraud math happens on this side. */

import type {
  AlertDoc,
  AlertListDoc,
  FeedbackBody,
  PatternsDoc,
  QueueFilter,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public body: unknown = null,
  ) {
    super(message);
  }
}

async function getJson<T>(path: string): Promise<T> {
  const response = await fetch(path, { headers: { accept: "application/json" } });
  if (!response.ok) {
    throw new ApiError(response.status, `GET ${path} -> ${response.status}`);
  }
  return (await response.json()) as T;
}

export function listAlerts(filter: QueueFilter, limit = 200, offset = 0): Promise<AlertListDoc> {
  const params = new URLSearchParams();
  if (filter.state) params.set("state", filter.state);
  if (filter.direction) params.set("direction", filter.direction);
  params.set("limit", String(limit));
  params.set("offset", String(offset));
  return getJson<AlertListDoc>(`/alerts?${params.toString()}`);
}

export function getAlert(alertId: string): Promise<AlertDoc> {
  return getJson<AlertDoc>(`/alerts/${alertId}`);
}

export function getPatterns(): Promise<PatternsDoc> {
  return getJson<PatternsDoc>("/patterns/latest");
}

export function getModel(): Promise<Record<string, unknown>> {
  return getJson<Record<string, unknown>>("/model");
}

/** The published feedback schema, serialized with this exact key order. */
export function buildFeedbackBody(
  decision: FeedbackBody["decision"],
  analyst: string,
  comment: string,
  force: boolean,
): string {
  return JSON.stringify({ decision, analyst, comment, force });
}

export interface FeedbackResult {
  status: number;
  alert: AlertDoc | null;
  conflictAlert: AlertDoc | null;
}

export async function postFeedback(
  alertId: string,
  decision: FeedbackBody["decision"],
  analyst: string,
  comment: string,
  force = false,
): Promise<FeedbackResult> {
  const response = await fetch(`/alerts/${alertId}/feedback`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: buildFeedbackBody(decision, analyst, comment, force),
  });
  if (response.status === 409) {
    const body = (await response.json()) as { alert?: AlertDoc };
    return { status: 409, alert: null, conflictAlert: body.alert ?? null };
  }
  if (!response.ok) {
    throw new ApiError(response.status, `feedback -> ${response.status}`);
  }
  return { status: response.status, alert: (await response.json()) as AlertDoc, conflictAlert: null };
}
