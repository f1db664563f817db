import { beforeEach, describe, expect, it, vi } from "vitest";

import { applyFilter, renderErrorBanner, renderQueue } from "../src/queue.js";
import type { QueueFilter } from "../src/types.js";
import { alertBatch } from "./fixtures.js";

const NO_FILTER: QueueFilter = { state: "", direction: "", severity: "" };

function container(): HTMLElement {
  const el = document.createElement("div");
  document.body.replaceChildren(el);
  return el;
}

describe("renderQueue", () => {
  beforeEach(() => {
    document.body.replaceChildren();
  });

  it("renders one row per fixture alert", () => {
    const el = container();
    const alerts = alertBatch();
    const shown = renderQueue(el, alerts, NO_FILTER, null, { onSelect: () => {} });
    expect(shown).toBe(alerts.length);
    expect(el.querySelectorAll("tr.queue-row")).toHaveLength(alerts.length);
  });

  it("shows the empty state for an empty log", () => {
    const el = container();
    const shown = renderQueue(el, [], NO_FILTER, null, { onSelect: () => {} });
    expect(shown).toBe(0);
    expect(el.querySelector(".empty-state")).not.toBeNull();
  });

  it("filters by state: 3 open of 4", () => {
    const el = container();
    const shown = renderQueue(el, alertBatch(), { ...NO_FILTER, state: "open" }, null, {
      onSelect: () => {},
    });
    expect(shown).toBe(3);
  });

  it("renders a 0.873 combined score in the high bucket", () => {
    const el = container();
    renderQueue(el, alertBatch().slice(0, 1), NO_FILTER, null, { onSelect: () => {} });
    const row = el.querySelector("tr.queue-row") as HTMLTableRowElement;
    expect(row.className).toContain("severity-high");
    expect(row.cells[2]?.textContent).toBe("high");
  });

  it("renders API numbers verbatim (no local math)", () => {
    const el = container();
    const alerts = alertBatch().slice(0, 1);
    renderQueue(el, alerts, NO_FILTER, null, { onSelect: () => {} });
    const row = el.querySelector("tr.queue-row") as HTMLTableRowElement;
    expect(row.cells[0]?.textContent).toBe(alerts[0]!.subject.number);
    expect(row.cells[3]?.textContent).toBe(alerts[0]!.scores.combined.toFixed(3));
    expect(row.cells[6]?.textContent).toContain(alerts[0]!.window.start);
  });

  it("invokes onSelect with the clicked alert id and keeps selection on redraw", () => {
    const el = container();
    const alerts = alertBatch();
    const selected: string[] = [];
    renderQueue(el, alerts, NO_FILTER, null, { onSelect: (id) => selected.push(id) });
    const rows = el.querySelectorAll("tr.queue-row");
    (rows[1] as HTMLElement).click();
    expect(selected).toEqual([alerts[1]!.alert_id]);

    renderQueue(el, alerts, NO_FILTER, alerts[1]!.alert_id, { onSelect: () => {} });
    const again = el.querySelectorAll("tr.queue-row");
    expect((again[1] as HTMLElement).className).toContain("selected");
  });

  it("preserves scroll position across refreshes", () => {
    const el = container();
    const alerts = alertBatch();
    renderQueue(el, alerts, NO_FILTER, null, { onSelect: () => {} });
    el.scrollTop = 42;
    renderQueue(el, alerts, NO_FILTER, null, { onSelect: () => {} });
    expect(el.scrollTop).toBe(42);
  });
});

describe("applyFilter", () => {
  it("combines state, direction and severity filters", () => {
    const alerts = alertBatch();
    expect(applyFilter(alerts, { state: "open", direction: "origin", severity: "" })).toHaveLength(2);
    expect(applyFilter(alerts, { state: "", direction: "destination", severity: "high" })).toHaveLength(1);
    expect(applyFilter(alerts, { state: "", direction: "", severity: "medium" })).toHaveLength(1);
    expect(applyFilter(alerts, { state: "", direction: "", severity: "low" })).toHaveLength(1);
  });
});

describe("renderErrorBanner", () => {
  it("shows a retry banner instead of failing silently", () => {
    const el = container();
    const retry = vi.fn();
    renderQueue(el, [], NO_FILTER, null, { onSelect: () => {} });
    renderErrorBanner(el, "Alert feed unavailable.", retry);
    const banner = el.querySelector(".error-banner");
    expect(banner).not.toBeNull();
    (banner!.querySelector("button") as HTMLButtonElement).click();
    expect(retry).toHaveBeenCalledOnce();
  });
});
