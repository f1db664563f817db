/** Pattern browser: cluster scatter (standardized calls vs total duration),
 * silhouette-by-k bars, and a deviation table from origin alert evidence. */

import type { AlertDoc, DeviationEvidence, PatternDoc } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";
const CLUSTER_COLORS = ["#4e79a7", "#f28e2b", "#59a14f", "#b07aa1", "#76b7b2", "#edc948", "#9c755f", "#bab0ac"];

function svgElement(doc: Document, tag: string, attrs: Record<string, string>): SVGElement {
  const el = doc.createElementNS(SVG_NS, tag) as SVGElement;
  for (const [key, value] of Object.entries(attrs)) {
    el.setAttribute(key, value);
  }
  return el;
}

export function renderScatter(container: HTMLElement, pattern: PatternDoc): void {
  const doc = container.ownerDocument;
  const report = pattern.report;
  const width = 420;
  const height = 300;
  const pad = 30;
  const svg = svgElement(doc, "svg", {
    viewBox: `0 0 ${width} ${height}`,
    width: String(width),
    height: String(height),
    role: "img",
  });
  svg.dataset.role = "cluster-scatter";

  const entries = Object.entries(report.points_2d);
  const xs = entries.map(([, p]) => p[0] ?? 0);
  const ys = entries.map(([, p]) => p[1] ?? 0);
  const xMin = Math.min(...xs), xMax = Math.max(...xs);
  const yMin = Math.min(...ys), yMax = Math.max(...ys);
  const sx = (x: number) => pad + ((x - xMin) / (xMax - xMin || 1)) * (width - 2 * pad);
  const sy = (y: number) => height - pad - ((y - yMin) / (yMax - yMin || 1)) * (height - 2 * pad);

  for (const [number, point] of entries) {
    const cluster = report.assignments[number] ?? 0;
    const isFraud = cluster === report.fraud_cluster_id;
    const dot = svgElement(doc, "circle", {
      cx: String(sx(point[0] ?? 0)),
      cy: String(sy(point[1] ?? 0)),
      r: isFraud ? "5" : "3",
      fill: CLUSTER_COLORS[cluster % CLUSTER_COLORS.length] ?? "#999",
      stroke: isFraud ? "#d62728" : "none",
      "stroke-width": isFraud ? "2" : "0",
    });
    dot.dataset.cluster = String(cluster);
    dot.dataset.fraud = String(isFraud);
    dot.dataset.number = number;
    const title = svgElement(doc, "title", {});
    title.textContent = `${number} (cluster ${cluster}${isFraud ? ", fraud" : ""})`;
    dot.appendChild(title);
    svg.appendChild(dot);
  }
  const caption = doc.createElement("div");
  caption.className = "chart-caption";
  caption.textContent =
    `window ${pattern.window.start} – ${pattern.window.end}: k=${report.k_best}, ` +
    `fraud cluster ${report.fraud_cluster_id} (${report.members.length} numbers), ` +
    `min silhouette ${report.min_silhouette.toFixed(3)}`;
  container.replaceChildren(svg, caption);
}

export function renderSilhouetteBars(container: HTMLElement, pattern: PatternDoc): void {
  const doc = container.ownerDocument;
  const report = pattern.report;
  const entries = Object.entries(report.silhouette_by_k)
    .map(([k, s]) => [Number(k), s] as [number, number])
    .sort((a, b) => a[0] - b[0]);
  const width = 420;
  const height = 160;
  const pad = 24;
  const barWidth = (width - 2 * pad) / entries.length;
  const svg = svgElement(doc, "svg", {
    viewBox: `0 0 ${width} ${height}`,
    width: String(width),
    height: String(height),
  });
  svg.dataset.role = "silhouette-bars";
  entries.forEach(([k, score], index) => {
    const barHeight = Math.max(0, score) * (height - 2 * pad);
    const isBest = k === report.k_best;
    const bar = svgElement(doc, "rect", {
      x: String(pad + index * barWidth + 2),
      y: String(height - pad - barHeight),
      width: String(barWidth - 4),
      height: String(barHeight),
      fill: isBest ? "#d62728" : "#4e79a7",
    });
    bar.dataset.k = String(k);
    bar.dataset.best = String(isBest);
    svg.appendChild(bar);
    const label = svgElement(doc, "text", {
      x: String(pad + index * barWidth + barWidth / 2),
      y: String(height - 6),
      "text-anchor": "middle",
      "font-size": "11",
    });
    label.textContent = String(k);
    svg.appendChild(label);
  });
  container.replaceChildren(svg);
}

export function deviationsFromAlerts(alerts: AlertDoc[]): DeviationEvidence[] {
  const rows: DeviationEvidence[] = [];
  const seen = new Set<string>();
  for (const alert of alerts) {
    for (const item of alert.evidence) {
      if (item.pipeline !== "origin" || !item.deviation) continue;
      const deviation = item.deviation as DeviationEvidence;
      const key = JSON.stringify(deviation.key);
      if (!seen.has(key)) {
        seen.add(key);
        rows.push(deviation);
      }
    }
  }
  return rows;
}

/** Stable sort by |dev_x| descending (equal rows keep their relative order). */
export function sortDeviations(rows: DeviationEvidence[]): DeviationEvidence[] {
  return rows
    .map((row, index) => ({ row, index }))
    .sort((a, b) => Math.abs(b.row.dev_x) - Math.abs(a.row.dev_x) || a.index - b.index)
    .map(({ row }) => row);
}

export function renderDeviationTable(container: HTMLElement, rows: DeviationEvidence[]): void {
  const doc = container.ownerDocument;
  container.replaceChildren();
  if (rows.length === 0) {
    const empty = doc.createElement("div");
    empty.className = "empty-state";
    empty.textContent = "No block deviations in the current alert set.";
    container.appendChild(empty);
    return;
  }
  const table = doc.createElement("table");
  table.className = "deviation-table";
  const head = doc.createElement("tr");
  for (const label of ["operator", "prefix", "block", "observed x", "observed y", "dev x", "dev y", "flagged"]) {
    const th = doc.createElement("th");
    th.textContent = label;
    head.appendChild(th);
  }
  table.appendChild(head);
  for (const row of sortDeviations(rows)) {
    const tr = doc.createElement("tr");
    const cells = [
      row.key.operator_code,
      row.key.dest_prefix,
      `${String(row.key.block).padStart(2, "0")}:00`,
      String(row.observed_x),
      String(row.observed_y),
      String(row.dev_x),
      String(row.dev_y),
      String(row.flagged),
    ];
    for (const text of cells) {
      const td = doc.createElement("td");
      td.textContent = text;
      tr.appendChild(td);
    }
    table.appendChild(tr);
  }
  container.appendChild(table);
}

export function renderPatternBrowser(
  scatterContainer: HTMLElement,
  barsContainer: HTMLElement,
  deviationContainer: HTMLElement,
  patterns: PatternDoc[],
  alerts: AlertDoc[],
): void {
  const doc = scatterContainer.ownerDocument;
  const latest = patterns[patterns.length - 1];
  if (!latest) {
    const empty = doc.createElement("div");
    empty.className = "empty-state";
    empty.textContent = "No cluster reports yet. Run detection over at least one window.";
    scatterContainer.replaceChildren(empty);
    barsContainer.replaceChildren();
  } else {
    renderScatter(scatterContainer, latest);
    renderSilhouetteBars(barsContainer, latest);
  }
  renderDeviationTable(deviationContainer, deviationsFromAlerts(alerts));
}
