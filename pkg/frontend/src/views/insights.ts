/** Insights screen: per-dataset annotation statistics, refreshed by polling
 * so new annotations show up within one interval. */

import { ForgeApi, StatsRecord } from "../api.js";

const POLL_INTERVAL_MS = 2000;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") {
      node.className = value;
    } else {
      node.setAttribute(key, value);
    }
  }
  node.append(...children);
  return node;
}

export function renderStats(stats: StatsRecord): HTMLElement {
  const panel = el("div", { class: "stats-panel" });
  const rows: [string, string][] = [
    ["samples", String(stats.n_samples)],
    ["annotated", `${stats.n_annotated} (${stats.percent_annotated.toFixed(2)}%)`],
    ["edited", `${stats.n_edited} (${stats.percent_edited.toFixed(2)}%)`],
    ["discarded", `${stats.n_discarded} (${stats.percent_discarded.toFixed(2)}%)`],
    ["pending", String(stats.n_pending)],
    ["locked", String(stats.n_locked)],
    ["total duration", `${stats.total_duration_s.toFixed(1)} s`],
    ["annotated duration", `${stats.annotated_duration_s.toFixed(1)} s`],
  ];
  if (stats.percent_assigned != null) {
    rows.push(["assigned (matching)", `${(100 * stats.percent_assigned).toFixed(1)}%`]);
    rows.push([
      "durations (before/match/trim)",
      `${stats.duration_before_match_s} / ${stats.duration_after_match_s} / ${stats.duration_after_trim_s} s`,
    ]);
  }
  const table = el("table", { class: "stats" });
  for (const [label, value] of rows) {
    table.append(el("tr", {}, el("th", {}, label), el("td", {}, value)));
  }
  panel.append(table);

  const reasons = Object.entries(stats.discard_reasons);
  const histogram = el("div", { class: "histogram" });
  if (reasons.length) {
    const max = Math.max(...reasons.map(([, count]) => count));
    for (const [reason, count] of reasons.sort()) {
      const bar = el("div", { class: "bar" });
      bar.style.width = `${Math.max(4, (100 * count) / max)}%`;
      histogram.append(
        el("div", { class: "bar-row" },
          el("span", { class: "bar-label" }, reason.replaceAll("_", " ")),
          bar,
          el("span", { class: "bar-count" }, String(count)),
        ),
      );
    }
  } else {
    histogram.append(el("p", { class: "empty" }, "no discards"));
  }
  panel.append(el("h4", {}, "discard reasons"), histogram);
  return panel;
}

export interface InsightsView {
  root: HTMLElement;
  refresh: () => Promise<void>;
  destroy: () => void;
}

export function mountInsightsView(container: HTMLElement, api: ForgeApi): InsightsView {
  const root = el("section", { class: "insights" });
  container.append(root);
  const select = el("select", {});
  const panelHolder = el("div", {});
  root.append(el("div", { class: "row" }, select), panelHolder);

  let timer: ReturnType<typeof setInterval> | null = null;

  async function refresh(): Promise<void> {
    if (!select.options.length) {
      const datasets = await api.listDatasets();
      select.replaceChildren(...datasets.map((d) => {
        const option = document.createElement("option");
        option.value = d.id;
        option.textContent = d.name;
        return option;
      }));
    }
    if (!select.value) {
      panelHolder.replaceChildren(el("p", { class: "empty" }, "no datasets"));
      return;
    }
    const stats = await api.stats(select.value);
    panelHolder.replaceChildren(renderStats(stats));
  }

  select.addEventListener("change", () => void refresh());
  void refresh();
  timer = setInterval(() => void refresh(), POLL_INTERVAL_MS);

  return {
    root,
    refresh,
    destroy: () => {
      if (timer) {
        clearInterval(timer);
      }
      root.remove();
    },
  };
}
