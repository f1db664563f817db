/** Wire types mirroring the engine's HTTP API, rendered verbatim. */

export type Direction = "origin" | "destination";
export type AlertState = "open" | "confirmed_fraud" | "false_positive";

export interface AlertDoc {
  alert_id: string;
  subject: { number: string; direction: Direction };
  window: { start: string; end: string };
  scores: {
    history: number;
    threshold: number;
    logreg: number | null;
    combined: number;
  };
  evidence: EvidenceItem[];
  features: Record<string, number>;
  state: AlertState;
  created_at: string;
  model_version: number;
}

export type EvidenceItem = Record<string, unknown> & {
  kind?: string;
  pipeline?: string;
};

export interface AlertListDoc {
  alerts: AlertDoc[];
  total: number;
}

export interface ClusterReportDoc {
  k_best: number;
  min_silhouette: number;
  mean_silhouette: number;
  centroids: number[][];
  fraud_cluster_id: number;
  members: string[];
  silhouette_by_k: Record<string, number>;
  assignments: Record<string, number>;
  points_2d: Record<string, number[]>;
}

export interface PatternDoc {
  window: { start: string; end: string };
  report: ClusterReportDoc;
}

export interface PatternsDoc {
  patterns: PatternDoc[];
}

export interface DeviationEvidence {
  key: {
    operator_code: string;
    dest_prefix: string;
    day_of_week: number;
    block: number;
  };
  observed_x: number;
  observed_y: number;
  dev_x: number;
  dev_y: number;
  flagged: boolean;
  low_confidence: boolean;
}

export interface FeedbackBody {
  decision: "confirmed_fraud" | "false_positive";
  analyst: string;
  comment: string;
  force: boolean;
}

export interface QueueFilter {
  state: AlertState | "";
  direction: Direction | "";
  severity: "" | "low" | "medium" | "high";
}
