/** Admin screen: dataset creation, script upload, batch upload with job
 * polling, and annotator assignment. */

import { ForgeApi, JobRecord } from "../api.js";

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

export interface AdminView {
  root: HTMLElement;
  refresh: () => Promise<void>;
  destroy: () => void;
}

export function mountAdminView(container: HTMLElement, api: ForgeApi): AdminView {
  const root = el("section", { class: "admin" });
  container.append(root);

  const datasetList = el("ul", { class: "datasets" });
  const status = el("p", { class: "status" });

  const nameInput = el("input", { placeholder: "dataset name" });
  const langInput = el("input", { placeholder: "language", value: "de" });
  const createButton = el("button", {}, "create dataset");

  const datasetSelect = el("select", { class: "dataset-select" });
  const scriptInput = el("input", { type: "file", accept: ".jsonl" });
  const scriptButton = el("button", {}, "upload script");
  const batchInput = el("input", { type: "file", accept: ".wav" });
  const truthInput = el("input", { type: "file", accept: ".truth,.txt" });
  const batchButton = el("button", {}, "upload batch");
  const jobLine = el("p", { class: "job" });
  const assignInput = el("input", { placeholder: "annotator email" });
  const assignButton = el("button", {}, "assign");

  async function refresh(): Promise<void> {
    const datasets = await api.listDatasets();
    datasetList.replaceChildren(
      ...datasets.map((d) =>
        el("li", {}, `${d.name} (${d.language || "?"}) — ${d.n_samples} samples`),
      ),
    );
    const selected = datasetSelect.value;
    datasetSelect.replaceChildren(
      ...datasets.map((d) => el("option", { value: d.id }, d.name)),
    );
    if (selected) {
      datasetSelect.value = selected;
    }
  }

  createButton.addEventListener("click", () => {
    void (async () => {
      try {
        await api.createDataset(nameInput.value.trim(), langInput.value.trim());
        status.textContent = `created ${nameInput.value}`;
        nameInput.value = "";
        await refresh();
      } catch (error) {
        status.textContent = String(error);
      }
    })();
  });

  scriptButton.addEventListener("click", () => {
    void (async () => {
      const file = scriptInput.files?.[0];
      if (!file || !datasetSelect.value) {
        status.textContent = "pick a dataset and a script file";
        return;
      }
      try {
        const count = await api.uploadScript(datasetSelect.value, await file.text());
        status.textContent = `script: ${count} sentences`;
      } catch (error) {
        status.textContent = String(error);
      }
    })();
  });

  batchButton.addEventListener("click", () => {
    void (async () => {
      const file = batchInput.files?.[0];
      if (!file || !datasetSelect.value) {
        status.textContent = "pick a dataset and a batch WAV";
        return;
      }
      const truth = truthInput.files?.[0];
      try {
        const jobId = await api.uploadBatch(
          datasetSelect.value,
          { name: file.name, data: file },
          truth ? { name: truth.name, data: truth } : undefined,
        );
        jobLine.textContent = `job ${jobId}: pending`;
        const job = await api.pollJob(jobId, {
          intervalMs: 2000,
          onTick: (j: JobRecord) => {
            jobLine.textContent = `job ${jobId}: ${j.status}`;
          },
        });
        const report = (job.result?.report ?? {}) as Record<string, unknown>;
        jobLine.textContent =
          `job ${jobId}: done — assigned ${report.assigned}/${report.total_segments}`;
        await refresh();
      } catch (error) {
        jobLine.textContent = String(error);
      }
    })();
  });

  assignButton.addEventListener("click", () => {
    void (async () => {
      if (!datasetSelect.value || !assignInput.value.trim()) {
        status.textContent = "pick a dataset and an annotator email";
        return;
      }
      try {
        await api.assignAnnotator(datasetSelect.value, assignInput.value.trim());
        status.textContent = `assigned ${assignInput.value}`;
      } catch (error) {
        status.textContent = String(error);
      }
    })();
  });

  root.append(
    el("h3", {}, "datasets"),
    datasetList,
    el("div", { class: "row" }, nameInput, langInput, createButton),
    el("h3", {}, "pipeline"),
    el("div", { class: "row" }, datasetSelect),
    el("div", { class: "row" }, scriptInput, scriptButton),
    el("div", { class: "row" }, batchInput, truthInput, batchButton),
    jobLine,
    el("h3", {}, "assignments"),
    el("div", { class: "row" }, assignInput, assignButton),
    status,
  );
  void refresh();

  return { root, refresh, destroy: () => root.remove() };
}
