/** Fixture payloads mirroring the engine API, plus an in-process fixture
 * server implemented as a fetch stub. */

import { vi } from "vitest";
import type { AlertDoc, PatternDoc } from "../src/types.js";

export function originAlert(overrides: Partial<AlertDoc> = {}): AlertDoc {
  return {
    alert_id: "1c6004fd3162faa3",
    subject: { number: "46990800000", direction: "origin" },
    window: { start: "2015-03-02T00:00:00Z", end: "2015-03-02T06:00:00Z" },
    scores: { history: 0, threshold: 1, logreg: 0.91, combined: 0.873 },
    evidence: [
      {
        pipeline: "origin",
        vector: {
          origin_number: "46990800000",
          operator_code: "3201",
          dest_prefix: "882",
          window: { start: "2015-03-02T00:00:00Z", end: "2015-03-02T06:00:00Z" },
          attempts: 15,
          total_minutes: 738.3,
          mean_call_minutes: 49.22,
          answer_ratio: 1.0,
          distinct_dests: 5,
          m_dist: 6.21,
        },
        deviation: {
          key: { operator_code: "3201", dest_prefix: "882", day_of_week: 0, block: 0 },
          observed_x: 738.3,
          observed_y: 15.0,
          dev_x: 9.4,
          dev_y: 6.1,
          flagged: true,
          low_confidence: false,
        },
        cold_start: false,
        iqr: 1.3,
        phi: 3.0,
        cohort_size: 12,
        reasons: ["mdist_iqr"],
        low_confidence: false,
      },
      { kind: "history", matched: false, entry: null },
      { kind: "threshold", fired_rules: ["total_minutes>180"] },
      { kind: "logreg", probability: 0.91 },
    ],
    features: {
      attempts: 15.0,
      total_minutes: 738.3,
      mean_call_minutes: 49.22,
      answer_ratio: 1.0,
      distinct_dests: 5.0,
      m_dist: 6.21,
      dev_x: 9.4,
      dev_y: 6.1,
    },
    state: "open",
    created_at: "2015-03-02T06:00:00Z",
    model_version: 1,
    ...overrides,
  };
}

export function alertBatch(): AlertDoc[] {
  return [
    originAlert(),
    originAlert({
      alert_id: "aa11223344556677",
      subject: { number: "46990800001", direction: "origin" },
      scores: { history: 0, threshold: 1, logreg: 0.42, combined: 0.412 },
    }),
    originAlert({
      alert_id: "bb11223344556677",
      subject: { number: "88226110002", direction: "destination" },
      scores: { history: 1, threshold: 1, logreg: 0.99, combined: 0.997 },
    }),
    originAlert({
      alert_id: "cc11223344556677",
      subject: { number: "46990800002", direction: "origin" },
      scores: { history: 0, threshold: 0, logreg: 0.61, combined: 0.583 },
      state: "confirmed_fraud",
    }),
  ];
}

export function patternFixture(): PatternDoc {
  return {
    window: { start: "2015-03-02T23:00:00Z", end: "2015-03-03T00:00:00Z" },
    report: {
      k_best: 2,
      min_silhouette: 0.86,
      mean_silhouette: 0.952,
      centroids: [
        [0.0, -0.13, -0.13, 0.0],
        [0.0, 7.16, 7.16, 0.0],
      ],
      fraud_cluster_id: 1,
      members: ["88226110002", "88226110005"],
      silhouette_by_k: { "2": 0.952, "3": 0.684, "4": 0.603, "5": 0.612 },
      assignments: {
        "3126110019": 0,
        "3126110068": 0,
        "3126110076": 0,
        "88226110002": 1,
        "88226110005": 1,
      },
      points_2d: {
        "3126110019": [0.0, 0.45],
        "3126110068": [0.0, -0.35],
        "3126110076": [0.0, -0.06],
        "88226110002": [0.0, 7.2],
        "88226110005": [0.0, 7.1],
      },
    },
  };
}

export interface FixtureServer {
  requests: { url: string; method: string; body: string | null }[];
  respondWith: (matcher: RegExp, status: number, payload: unknown) => void;
  failNext: () => void;
}

/** Installs a fetch stub that serves fixture payloads like the real API. */
export function installFixtureServer(alerts: AlertDoc[], patterns: PatternDoc[]): FixtureServer {
  const requests: FixtureServer["requests"] = [];
  const extra: { matcher: RegExp; status: number; payload: unknown }[] = [];
  let failNext = false;

  const handler = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const body = typeof init?.body === "string" ? init.body : null;
    requests.push({ url, method, body });
    if (failNext) {
      failNext = false;
      throw new TypeError("network down");
    }
    for (const rule of extra) {
      if (rule.matcher.test(url)) {
        return new Response(JSON.stringify(rule.payload), {
          status: rule.status,
          headers: { "content-type": "application/json" },
        });
      }
    }
    if (url.startsWith("/alerts?")) {
      const params = new URLSearchParams(url.split("?")[1]);
      let out = alerts;
      const state = params.get("state");
      const direction = params.get("direction");
      if (state) out = out.filter((a) => a.state === state);
      if (direction) out = out.filter((a) => a.subject.direction === direction);
      return Response.json({ alerts: out, total: alerts.length });
    }
    const detail = url.match(/^\/alerts\/([0-9a-f]+)$/);
    if (detail) {
      const alert = alerts.find((a) => a.alert_id === detail[1]);
      return alert
        ? Response.json(alert)
        : Response.json({ detail: "unknown alert" }, { status: 404 });
    }
    const feedback = url.match(/^\/alerts\/([0-9a-f]+)\/feedback$/);
    if (feedback && method === "POST") {
      const alert = alerts.find((a) => a.alert_id === feedback[1]);
      if (!alert) return Response.json({ detail: "unknown alert" }, { status: 404 });
      const parsed = JSON.parse(body ?? "{}") as { decision: AlertDoc["state"]; force?: boolean };
      if (alert.state !== "open" && !parsed.force) {
        return Response.json({ detail: "already decided", alert }, { status: 409 });
      }
      const updated = { ...alert, state: parsed.decision };
      return Response.json(updated);
    }
    if (url === "/patterns/latest") {
      return Response.json({ patterns });
    }
    return Response.json({ detail: `no fixture for ${url}` }, { status: 404 });
  };

  vi.stubGlobal("fetch", vi.fn(handler));
  return {
    requests,
    respondWith: (matcher, status, payload) => extra.push({ matcher, status, payload }),
    failNext: () => {
      failNext = true;
    },
  };
}
