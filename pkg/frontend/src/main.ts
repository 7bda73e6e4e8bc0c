// DOM wiring: mounts the annotate panel and the dashboard, refreshing the
// dashboard on a timer. Logic lives in session.ts/dashboard.ts; this file
// only moves strings into elements and events into method calls.

import { ApiClient } from "./api.js";
import { AnnotateSession } from "./session.js";
import { loadDashboard, renderDashboard } from "./dashboard.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

async function refreshDashboard(): Promise<void> {
  const model = await loadDashboard(api);
  el("dashboard").innerHTML = renderDashboard(model);
}

function mountSession(): void {
  const annotator = (el<HTMLInputElement>("annotator").value || "anonymous").trim();
  const purpose = el<HTMLSelectElement>("purpose").value;
  const session = new AnnotateSession(api, annotator, purpose);
  const panel = el("task-panel");

  const rerender = () => {
    panel.innerHTML = session.renderTask();
  };

  panel.addEventListener("click", async (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset.action;
    if (!action) return;
    if (action === "vote") {
      await session.vote(target.dataset.label ?? "");
    } else if (action === "retry") {
      await session.claim();
    } else if (action === "toggle-view") {
      session.toggleView();
    } else if (action === "resolve") {
      const note = panel.querySelector<HTMLTextAreaElement>("[data-field=note]")?.value ?? "";
      await session.resolveConflict("positive", note);
    }
    rerender();
    void refreshDashboard();
  });

  void session.claim().then(rerender);
}

el("start").addEventListener("click", mountSession);
void refreshDashboard();
setInterval(() => void refreshDashboard(), 5000);
