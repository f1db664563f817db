/** Alert queue: newest-first table with state/direction/severity filters.
 * Re-renders preserve scroll position and the selected row. */

import { ageLabel, formatScore, severityBucket } from "./severity.js";
import type { AlertDoc, QueueFilter } from "./types.js";

export function applyFilter(alerts: AlertDoc[], filter: QueueFilter): AlertDoc[] {
  return alerts.filter((alert) => {
    if (filter.state && alert.state !== filter.state) return false;
    if (filter.direction && alert.subject.direction !== filter.direction) return false;
    if (filter.severity && severityBucket(alert.scores.combined) !== filter.severity) return false;
    return true;
  });
}

export interface QueueHandlers {
  onSelect: (alertId: string) => void;
}

export function renderQueue(
  container: HTMLElement,
  alerts: AlertDoc[],
  filter: QueueFilter,
  selectedId: string | null,
  handlers: QueueHandlers,
  nowMs: number = Date.now(),
): number {
  const doc = container.ownerDocument;
  const visible = applyFilter(alerts, filter);
  const scrollTop = container.scrollTop;
  container.replaceChildren();

  if (visible.length === 0) {
    const empty = doc.createElement("div");
    empty.className = "empty-state";
    empty.textContent = "No alerts match the current filters.";
    container.appendChild(empty);
    return 0;
  }

  const table = doc.createElement("table");
  table.className = "queue-table";
  const head = doc.createElement("tr");
  for (const label of ["number", "dir", "severity", "combined", "state", "age", "window"]) {
    const th = doc.createElement("th");
    th.textContent = label;
    head.appendChild(th);
  }
  table.appendChild(head);

  for (const alert of visible) {
    const severity = severityBucket(alert.scores.combined);
    const row = doc.createElement("tr");
    row.className = `queue-row severity-${severity}` + (alert.alert_id === selectedId ? " selected" : "");
    row.dataset.alertId = alert.alert_id;
    const cells = [
      alert.subject.number,
      alert.subject.direction === "origin" ? "A" : "B",
      severity,
      formatScore(alert.scores.combined),
      alert.state,
      ageLabel(alert.created_at, nowMs),
      `${alert.window.start} – ${alert.window.end}`,
    ];
    for (const text of cells) {
      const td = doc.createElement("td");
      td.textContent = text;
      row.appendChild(td);
    }
    row.addEventListener("click", () => handlers.onSelect(alert.alert_id));
    table.appendChild(row);
  }
  container.appendChild(table);
  container.scrollTop = scrollTop;
  return visible.length;
}

export function renderErrorBanner(container: HTMLElement, message: string, onRetry: () => void): void {
  const doc = container.ownerDocument;
  const banner = doc.createElement("div");
  banner.className = "error-banner";
  const text = doc.createElement("span");
  text.textContent = message;
  const retry = doc.createElement("button");
  retry.textContent = "Retry";
  retry.addEventListener("click", onRetry);
  banner.append(text, retry);
  container.prepend(banner);
}
