/** Dashboard boot: polling queue, detail panel, pattern browser. */

import { getAlert, getPatterns, listAlerts } from "./api.js";
import { renderDetail } from "./detail.js";
import { renderPatternBrowser } from "./patterns.js";
import { renderErrorBanner, renderQueue } from "./queue.js";
import type { AlertDoc, PatternDoc, QueueFilter } from "./types.js";

const POLL_MS = 10_000;

interface DashboardState {
  alerts: AlertDoc[];
  patterns: PatternDoc[];
  filter: QueueFilter;
  selectedId: string | null;
}

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

function toast(message: string, isError: boolean): void {
  const el = byId("toast");
  el.textContent = message;
  el.className = `toast ${isError ? "toast-error" : "toast-ok"} visible`;
  setTimeout(() => el.classList.remove("visible"), 4000);
}

function boot(): void {
  const state: DashboardState = {
    alerts: [],
    patterns: [],
    filter: { state: "", direction: "", severity: "" },
    selectedId: null,
  };
  const queueEl = byId("queue");
  const detailEl = byId("detail");

  const select = (alertId: string) => {
    state.selectedId = alertId;
    getAlert(alertId)
      .then((alert) =>
        renderDetail(detailEl, alert, {
          onUpdated: (updated) => {
            state.alerts = state.alerts.map((a) => (a.alert_id === updated.alert_id ? updated : a));
            redrawQueue();
          },
          onToast: toast,
        }),
      )
      .catch((error: unknown) => toast(`Failed to load alert: ${String(error)}`, true));
    redrawQueue();
  };

  const redrawQueue = () => {
    const count = renderQueue(queueEl, state.alerts, state.filter, state.selectedId, {
      onSelect: select,
    });
    byId("queue-count").textContent = `${count} shown / ${state.alerts.length} loaded`;
  };

  const refresh = () => {
    listAlerts(state.filter)
      .then((doc) => {
        state.alerts = doc.alerts;
        redrawQueue();
      })
      .catch(() =>
        renderErrorBanner(queueEl, "Alert feed unavailable.", refresh),
      );
    getPatterns()
      .then((doc) => {
        state.patterns = doc.patterns;
        renderPatternBrowser(
          byId("scatter"), byId("silhouette"), byId("deviations"),
          state.patterns, state.alerts,
        );
      })
      .catch(() => {
        /* pattern panel keeps its last contents; the queue banner covers outages */
      });
  };

  for (const [selectId, key] of [
    ["filter-state", "state"],
    ["filter-direction", "direction"],
    ["filter-severity", "severity"],
  ] as const) {
    const control = byId(selectId) as HTMLSelectElement;
    control.addEventListener("change", () => {
      state.filter = { ...state.filter, [key]: control.value };
      refresh();
    });
  }

  refresh();
  setInterval(refresh, POLL_MS);
}

boot();
