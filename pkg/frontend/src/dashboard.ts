// Loop progress view: current iteration, triage buckets, backlog, validation
// metrics against the stop thresholds, and annotator agreement to date.
// Every number shown equals the service JSON it was fetched from.

import { ApiClient, IterationReport, KappaStats } from "./api.js";
import { escapeHtml } from "./diffview.js";

export interface DashboardModel {
  stale: boolean;
  report: IterationReport | null;
  kappa: KappaStats | null;
  stopReached: boolean;
}

export async function loadDashboard(api: ApiClient, purpose = "binary_label"): Promise<DashboardModel> {
  try {
    const [report, kappa] = await Promise.all([
      api.currentIteration(),
      api.kappa(purpose),
    ]);
    return {
      stale: false,
      report,
      kappa,
      stopReached: report != null && report.stop,
    };
  } catch {
    return { stale: true, report: null, kappa: null, stopReached: false };
  }
}

function metric(value: number): string {
  return value.toFixed(4);
}

export function renderDashboard(model: DashboardModel): string {
  const parts: string[] = [];
  if (model.stale) {
    parts.push(`<div class="banner stale">Service unreachable — showing nothing rather than stale numbers.</div>`);
    return `<div class="dashboard">${parts.join("")}</div>`;
  }
  const r = model.report;
  if (r == null) {
    parts.push(`<div class="fresh">Iteration 0 — loop not started, backlog empty.</div>`);
  } else {
    parts.push(`<h3>Iteration ${r.iteration}</h3>`);
    if (model.stopReached) {
      parts.push(
        `<div class="badge stop">stop condition reached` +
        `${r.stop_reason ? ` (${escapeHtml(r.stop_reason)})` : ""}</div>`,
      );
    }
    parts.push(
      `<table class="buckets">` +
        `<tr><th>all-positive</th><td data-field="bucket_all_positive">${r.bucket_all_positive}</td></tr>` +
        `<tr><th>mixed</th><td data-field="bucket_mixed">${r.bucket_mixed}</td></tr>` +
        `<tr><th>all-negative</th><td data-field="bucket_all_negative">${r.bucket_all_negative}</td></tr>` +
        `<tr><th>sampled for annotation</th><td data-field="sampled">${r.sampled_for_annotation}</td></tr>` +
        `<tr><th>new human labels</th><td data-field="new_labels">${r.new_human_labels}</td></tr>` +
      `</table>`,
    );
    parts.push(
      `<div class="metrics">` +
        `<span data-field="precision">P ${metric(r.ensemble_metrics.precision)}</span>` +
        `<span data-field="recall">R ${metric(r.ensemble_metrics.recall)}</span>` +
        `<span data-field="dynamic_f1">dynF1 ${metric(r.dynamic_f1)}</span>` +
      `</div>`,
    );
  }
  if (model.kappa != null) {
    const k = model.kappa.kappa;
    parts.push(
      `<div class="kappa" data-field="kappa">kappa ${k == null ? "n/a" : k.toFixed(2)}` +
      ` over ${model.kappa.items} items</div>`,
    );
  }
  return `<div class="dashboard">${parts.join("")}</div>`;
}
