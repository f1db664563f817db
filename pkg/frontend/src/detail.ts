/** Alert detail: full evidence chain plus verdict controls with optimistic
 * updates reconciled against the server response. */

import { postFeedback } from "./api.js";
import { formatScore } from "./severity.js";
import type { AlertDoc, DeviationEvidence, EvidenceItem } from "./types.js";

export interface DetailHandlers {
  onUpdated: (alert: AlertDoc) => void;
  onToast: (message: string, isError: boolean) => void;
}

function section(doc: Document, title: string): HTMLElement {
  const wrap = doc.createElement("section");
  const h = doc.createElement("h3");
  h.textContent = title;
  wrap.appendChild(h);
  return wrap;
}

function kvTable(doc: Document, entries: [string, string][]): HTMLTableElement {
  const table = doc.createElement("table");
  table.className = "kv-table";
  for (const [key, value] of entries) {
    const row = doc.createElement("tr");
    const k = doc.createElement("td");
    k.textContent = key;
    const v = doc.createElement("td");
    v.textContent = value;
    row.append(k, v);
    table.appendChild(row);
  }
  return table;
}

function noveltyEvidence(alert: AlertDoc): EvidenceItem | undefined {
  return alert.evidence.find((e) => e.pipeline === "origin" || e.pipeline === "dest");
}

export function renderDetail(
  container: HTMLElement,
  alert: AlertDoc,
  handlers: DetailHandlers,
): void {
  const doc = container.ownerDocument;
  container.replaceChildren();

  const header = doc.createElement("div");
  header.className = "detail-header";
  const title = doc.createElement("h2");
  title.textContent = `${alert.subject.number} (${alert.subject.direction})`;
  const stateChip = doc.createElement("span");
  stateChip.className = `state-chip state-${alert.state}`;
  stateChip.dataset.role = "state-chip";
  stateChip.textContent = alert.state;
  header.append(title, stateChip);
  container.appendChild(header);

  const scores = section(doc, "Scores");
  scores.appendChild(
    kvTable(doc, [
      ["combined", formatScore(alert.scores.combined)],
      ["history", String(alert.scores.history)],
      ["threshold", String(alert.scores.threshold)],
      ["model probability", formatScore(alert.scores.logreg)],
      ["model version", String(alert.model_version)],
    ]),
  );
  container.appendChild(scores);

  const features = section(doc, "Feature vector");
  features.appendChild(
    kvTable(doc, Object.entries(alert.features).map(([k, v]) => [k, String(v)])),
  );
  container.appendChild(features);

  const novelty = noveltyEvidence(alert);
  if (novelty) {
    const pipe = section(doc, novelty.pipeline === "origin" ? "Caller novelty" : "Destination novelty");
    const rows: [string, string][] = [];
    if (novelty.pipeline === "origin") {
      const mdist = (novelty.vector as Record<string, unknown> | undefined)?.["m_dist"];
      const iqr = novelty.iqr as number | null;
      const phi = novelty.phi as number;
      rows.push(["distance", String(mdist ?? "n/a")]);
      if (iqr !== null && iqr !== undefined) {
        rows.push(["flag threshold (phi x IQR)", String(phi * iqr)]);
        rows.push(["cohort IQR", String(iqr)]);
      }
      rows.push(["cohort size", String(novelty.cohort_size)]);
      rows.push(["cold start", String(novelty.cold_start)]);
      const deviation = novelty.deviation as DeviationEvidence | null;
      if (deviation) {
        rows.push(["block deviation x", String(deviation.dev_x)]);
        rows.push(["block deviation y", String(deviation.dev_y)]);
      }
    } else {
      rows.push(["detectors", (novelty.detectors as string[]).join(", ")]);
      rows.push(["fence distance", String(novelty.iqr_distance)]);
      if (novelty.cluster_id !== null && novelty.cluster_id !== undefined) {
        rows.push(["cluster", String(novelty.cluster_id)]);
      }
    }
    pipe.appendChild(kvTable(doc, rows));
    container.appendChild(pipe);
  }

  const historyItem = alert.evidence.find((e) => e.kind === "history");
  const thresholdItem = alert.evidence.find((e) => e.kind === "threshold");
  const detectors = section(doc, "Detectors");
  const fired = (thresholdItem?.fired_rules as string[] | undefined) ?? [];
  const matched = historyItem?.entry as Record<string, unknown> | null | undefined;
  detectors.appendChild(
    kvTable(doc, [
      ["history match", matched ? `block ${matched.prefix}` : "none"],
      ["fired rules", fired.length ? fired.join(", ") : "none"],
    ]),
  );
  container.appendChild(detectors);

  const controls = doc.createElement("div");
  controls.className = "verdict-controls";
  const analystInput = doc.createElement("input");
  analystInput.placeholder = "analyst";
  analystInput.value = "analyst";
  const commentInput = doc.createElement("input");
  commentInput.placeholder = "comment";

  const submit = (decision: "confirmed_fraud" | "false_positive", force: boolean) => {
    const previous = alert.state;
    alert.state = decision; // optimistic
    stateChip.textContent = decision;
    stateChip.className = `state-chip state-${decision}`;
    postFeedback(alert.alert_id, decision, analystInput.value, commentInput.value, force)
      .then((result) => {
        if (result.status === 409 && result.conflictAlert) {
          alert.state = result.conflictAlert.state;
          renderDetail(container, result.conflictAlert, handlers);
          handlers.onToast("Alert already decided; showing the server state. Use force to override.", true);
          const forceButton = doc.createElement("button");
          forceButton.textContent = `Force ${decision.replace("_", " ")}`;
          forceButton.className = "force-button";
          forceButton.addEventListener("click", () => submit(decision, true));
          container.appendChild(forceButton);
          return;
        }
        if (result.alert) {
          handlers.onUpdated(result.alert);
          renderDetail(container, result.alert, handlers);
          handlers.onToast(`Recorded ${decision.replace("_", " ")}.`, false);
        }
      })
      .catch((error: unknown) => {
        alert.state = previous; // revert the optimistic update
        stateChip.textContent = previous;
        stateChip.className = `state-chip state-${previous}`;
        handlers.onToast(`Feedback failed: ${String(error)}`, true);
      });
  };

  const confirm = doc.createElement("button");
  confirm.textContent = "Confirm fraud";
  confirm.className = "confirm-button";
  confirm.disabled = alert.state !== "open";
  confirm.addEventListener("click", () => submit("confirmed_fraud", false));
  const reject = doc.createElement("button");
  reject.textContent = "False positive";
  reject.className = "reject-button";
  reject.disabled = alert.state !== "open";
  reject.addEventListener("click", () => submit("false_positive", false));
  controls.append(analystInput, commentInput, confirm, reject);
  container.appendChild(controls);
}
