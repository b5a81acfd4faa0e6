/** Entry point: token login, role-based tabs, one-lock discipline on
 * navigation (the annotate view releases its sample when left). */

import { ForgeApi, Identity } from "./api.js";
import { mountAdminView } from "./views/admin.js";
import { AnnotateView, mountAnnotateView } from "./views/annotate.js";
import { mountInsightsView } from "./views/insights.js";

const app = document.getElementById("app")!;

function show(node: HTMLElement) {
  app.replaceChildren(node);
}

function loginScreen() {
  const box = document.createElement("div");
  box.className = "login";
  box.innerHTML = `
    <h2>ttsforge annotation</h2>
    <label>service URL <input id="base" value="${location.origin}"></label>
    <label>token <input id="token" type="password"></label>
    <button id="enter">enter</button>
    <p id="login-error" class="notice"></p>
  `;
  show(box);
  const enter = box.querySelector<HTMLButtonElement>("#enter")!;
  enter.addEventListener("click", () => {
    void (async () => {
      const base = box.querySelector<HTMLInputElement>("#base")!.value;
      const token = box.querySelector<HTMLInputElement>("#token")!.value.trim();
      const api = new ForgeApi(base, token);
      try {
        const identity = await api.me();
        mainScreen(api, identity);
      } catch {
        box.querySelector("#login-error")!.textContent = "login failed: unknown token";
      }
    })();
  });
}

function mainScreen(api: ForgeApi, identity: Identity) {
  const shell = document.createElement("div");
  shell.className = "shell";
  const nav = document.createElement("nav");
  const content = document.createElement("main");
  shell.append(nav, content);

  let annotateView: AnnotateView | null = null;
  let currentDestroy: (() => void | Promise<void>) | null = null;

  async function switchTo(tab: string) {
    if (currentDestroy) {
      await currentDestroy();
      currentDestroy = null;
      annotateView = null;
    }
    content.replaceChildren();
    if (tab === "annotate") {
      const datasets = (await api.listDatasets()).filter((d) => d.assigned !== false);
      if (!datasets.length) {
        content.textContent = "no datasets assigned";
        return;
      }
      annotateView = mountAnnotateView(content, api, datasets[0]);
      currentDestroy = annotateView.destroy;
    } else if (tab === "admin") {
      const view = mountAdminView(content, api);
      currentDestroy = view.destroy;
    } else {
      const view = mountInsightsView(content, api);
      currentDestroy = view.destroy;
    }
  }

  const tabs =
    identity.role === "admin" ? ["admin", "insights"] : ["annotate", "insights"];
  for (const tab of tabs) {
    const button = document.createElement("button");
    button.textContent = tab;
    button.addEventListener("click", () => void switchTo(tab));
    nav.append(button);
  }
  const who = document.createElement("span");
  who.className = "who";
  who.textContent = `${identity.email} (${identity.role})`;
  nav.append(who);

  window.addEventListener("beforeunload", () => {
    void annotateView?.session.releaseCurrent();
  });

  show(shell);
  void switchTo(tabs[0]);
}

loginScreen();
