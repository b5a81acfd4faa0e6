/** Annotator screen: audio playback, original/ASR side-by-side with a
 * word-level diff, post-editing, approve/discard, lease countdown. */

import { DatasetRecord, ForgeApi, SampleRecord } from "../api.js";
import { diffWords } from "../diff.js";
import { AnnotationSession, DISCARD_REASONS } from "../session.js";

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

export function renderDiff(original: string, asr: string): HTMLElement {
  const holder = el("p", { class: "diff" });
  for (const op of diffWords(original, asr)) {
    const span = el("span", { class: `diff-${op.kind}` }, op.text);
    holder.append(span, " ");
  }
  return holder;
}

export interface AnnotateView {
  root: HTMLElement;
  session: AnnotationSession;
  destroy: () => Promise<void>;
}

export function mountAnnotateView(
  container: HTMLElement,
  api: ForgeApi,
  dataset: DatasetRecord,
): AnnotateView {
  const session = new AnnotationSession(api, dataset.id);
  const root = el("section", { class: "annotate" });
  container.append(root);

  let leaseTimer: ReturnType<typeof setInterval> | null = null;
  let audioUrl: string | null = null;

  function clearAudio() {
    if (audioUrl) {
      URL.revokeObjectURL(audioUrl);
      audioUrl = null;
    }
    if (leaseTimer) {
      clearInterval(leaseTimer);
      leaseTimer = null;
    }
  }

  function showEmpty() {
    root.replaceChildren(
      el("p", { class: "empty" }, "no samples remaining"),
      el("button", { class: "refresh" }, "check again"),
    );
    root.querySelector("button.refresh")!.addEventListener("click", () => void load());
  }

  async function showSample(sample: SampleRecord) {
    const audio = el("audio", { controls: "" });
    try {
      const blob = await api.fetchAudio(sample.id);
      audioUrl = URL.createObjectURL(blob);
      audio.src = audioUrl;
    } catch {
      /* audio panel stays empty; the sample can still be discarded */
      session.markPlayed();
    }
    audio.addEventListener("play", () => {
      session.markPlayed();
      refreshButtons();
    });

    const editor = el("textarea", { class: "editor", rows: "3" });
    editor.value = sample.original_text;
    const useOriginal = el("button", {}, "use original");
    useOriginal.addEventListener("click", () => {
      editor.value = sample.original_text;
    });
    const useAsr = el("button", {}, "use ASR");
    useAsr.addEventListener("click", () => {
      editor.value = sample.asr_text;
    });

    const reasonBoxes: HTMLInputElement[] = [];
    const reasonsHolder = el("div", { class: "reasons" });
    for (const reason of DISCARD_REASONS) {
      const box = el("input", { type: "checkbox", value: reason, id: `reason-${reason}` });
      reasonBoxes.push(box);
      box.addEventListener("change", refreshButtons);
      reasonsHolder.append(
        el("label", { for: `reason-${reason}` }, box, reason.replaceAll("_", " ")),
      );
    }
    const feedback = el("textarea", { class: "feedback", rows: "2", placeholder: "feedback" });
    feedback.addEventListener("input", refreshButtons);

    const approveButton = el("button", { class: "approve", disabled: "" }, "approve");
    const discardButton = el("button", { class: "discard", disabled: "" }, "discard");
    const lease = el("span", { class: "lease" });
    const notice = el("p", { class: "notice" });

    function selectedReasons(): string[] {
      return reasonBoxes.filter((b) => b.checked).map((b) => b.value);
    }

    function refreshButtons() {
      approveButton.toggleAttribute("disabled", !session.canApprove());
      discardButton.toggleAttribute(
        "disabled",
        !session.canDiscard(selectedReasons(), feedback.value),
      );
    }

    approveButton.addEventListener("click", () => {
      void (async () => {
        await session.approve(editor.value);
        notice.textContent = session.notice;
        await load();
      })();
    });
    discardButton.addEventListener("click", () => {
      void (async () => {
        await session.discard(selectedReasons(), feedback.value);
        notice.textContent = session.notice;
        await load();
      })();
    });

    leaseTimer = setInterval(() => {
      lease.textContent = `lease ${Math.round(session.leaseRemainingS())}s`;
    }, 1000);
    lease.textContent = `lease ${Math.round(session.leaseRemainingS())}s`;

    root.replaceChildren(
      el("header", {}, el("strong", {}, sample.sentence_id), " ", lease, " ",
        el("span", { class: "wer" }, `WER ${sample.wer.toFixed(2)}`)),
      audio,
      el("div", { class: "texts" },
        el("div", {}, el("h4", {}, "original"), el("p", { class: "original" }, sample.original_text)),
        el("div", {}, el("h4", {}, "ASR"), el("p", { class: "asr" }, sample.asr_text)),
      ),
      el("h4", {}, "differences"),
      renderDiff(sample.original_text, sample.asr_text),
      el("h4", {}, "final text"),
      editor,
      el("div", { class: "editor-buttons" }, useOriginal, useAsr),
      el("h4", {}, "discard"),
      reasonsHolder,
      feedback,
      el("div", { class: "actions" }, approveButton, discardButton),
      notice,
    );
    refreshButtons();
  }

  async function load() {
    clearAudio();
    root.replaceChildren(el("p", {}, "loading…"));
    const sample = await session.fetchNext();
    if (sample === null) {
      showEmpty();
    } else {
      await showSample(sample);
    }
  }

  void load();

  return {
    root,
    session,
    destroy: async () => {
      clearAudio();
      await session.releaseCurrent();
      root.remove();
    },
  };
}
