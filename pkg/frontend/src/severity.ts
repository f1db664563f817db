/** Pure display derivations for the alert view model. */

export type Severity = "low" | "medium" | "high";

/** Buckets partition [0, 1]: low [0, 0.5), medium [0.5, 0.8), high [0.8, 1]. */
export function severityBucket(combinedScore: number): Severity {
  if (combinedScore < 0.5) return "low";
  if (combinedScore < 0.8) return "medium";
  return "high";
}

/** Human age like "3m", "2h", "5d" relative to now. */
export function ageLabel(createdAtIso: string, nowMs: number = Date.now()): string {
  const created = Date.parse(createdAtIso);
  const seconds = Math.max(0, Math.floor((nowMs - created) / 1000));
  if (seconds < 60) return `${seconds}s`;
  const minutes = Math.floor(seconds / 60);
  if (minutes < 60) return `${minutes}m`;
  const hours = Math.floor(minutes / 60);
  if (hours < 48) return `${hours}h`;
  return `${Math.floor(hours / 24)}d`;
}

export function formatScore(value: number | null): string {
  return value === null ? "n/a" : value.toFixed(3);
}
