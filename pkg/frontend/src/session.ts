// Annotation session state machine: claim -> render -> vote -> auto-advance.
// Headless by design; the DOM layer only calls methods and re-renders from
// state, so scripted sessions in tests drive exactly what a browser would.

import { ApiClient, ApiError, Task } from "./api.js";
import { parseUnifiedDiff, renderSideBySide, renderUnified, escapeHtml } from "./diffview.js";

export type Phase = "idle" | "loading" | "task" | "drained" | "error";

export interface SessionState {
  phase: Phase;
  task: Task | null;
  submitting: boolean;
  votesCast: number;
  splitView: boolean;
  error: string | null;
}

const BINARY_LABELS = ["positive", "negative"];

export class AnnotateSession {
  state: SessionState = {
    phase: "idle",
    task: null,
    submitting: false,
    votesCast: 0,
    splitView: false,
    error: null,
  };

  constructor(
    private api: ApiClient,
    public annotator: string,
    public purpose: string,
    private taxonomy: string[] = [],
  ) {}

  async claim(): Promise<void> {
    this.state.phase = "loading";
    this.state.error = null;
    try {
      const task = await this.api.claimNext(this.annotator, this.purpose);
      if (task == null) {
        this.state.phase = "drained";
        this.state.task = null;
      } else {
        this.state.phase = "task";
        this.state.task = task;
      }
    } catch (err) {
      // service unreachable: banner + retry, never silent loss
      this.state.phase = "error";
      this.state.error = describe(err);
    }
  }

  hasVoted(): boolean {
    const task = this.state.task;
    if (!task) return false;
    return task.votes.some((v) => v.annotator === this.annotator);
  }

  labelChoices(): string[] {
    return this.purpose === "category_label" ? this.taxonomy : BINARY_LABELS;
  }

  async vote(label: string): Promise<void> {
    const task = this.state.task;
    if (!task || this.state.submitting || this.hasVoted()) {
      return; // double-submit guard: second click no-ops
    }
    this.state.submitting = true;
    try {
      await this.api.vote(task.id, this.annotator, label);
      this.state.votesCast += 1;
      await this.claim(); // auto-advance
    } catch (err) {
      if (err instanceof ApiError && (err.code === "DuplicateVote" || err.code === "TaskResolved")) {
        await this.claim(); // somebody beat us to it; move on
      } else {
        this.state.phase = "error";
        this.state.error = describe(err);
      }
    } finally {
      this.state.submitting = false;
    }
  }

  async resolveConflict(label: string, note: string): Promise<void> {
    const task = this.state.task;
    if (!task) return;
    this.state.submitting = true;
    try {
      await this.api.resolve(task.id, label, note);
      await this.claim();
    } catch (err) {
      this.state.phase = "error";
      this.state.error = describe(err);
    } finally {
      this.state.submitting = false;
    }
  }

  toggleView(): void {
    this.state.splitView = !this.state.splitView;
  }

  renderTask(): string {
    const { phase, task, error } = this.state;
    if (phase === "drained") {
      return `<div class="drained">Queue drained — nothing left to annotate.</div>`;
    }
    if (phase === "error") {
      return (
        `<div class="banner error">Service unreachable: ${escapeHtml(error ?? "")}` +
        `<button data-action="retry">Retry</button></div>`
      );
    }
    if (!task) {
      return `<div class="idle">Claim a task to begin.</div>`;
    }
    const rows = parseUnifiedDiff(task.payload.hunk_diff);
    const diff = this.state.splitView ? renderSideBySide(rows) : renderUnified(rows);
    const comments = task.payload.comments
      .map(
        (c) =>
          `<div class="comment ${c.role}"><span class="role">${escapeHtml(c.role)}</span>` +
          `<span class="body">${escapeHtml(c.body)}</span></div>`,
      )
      .join("");
    const voted = this.hasVoted();
    const controls = this.labelChoices()
      .map(
        (label) =>
          `<button data-action="vote" data-label="${escapeHtml(label)}"` +
          `${voted || this.state.submitting ? " disabled" : ""}>${escapeHtml(label)}</button>`,
      )
      .join("");
    const disagreement =
      task.status === "awaiting_consensus"
        ? `<div class="disagreement"><h4>Disagreement</h4>` +
          task.votes
            .map((v) => `<div>${escapeHtml(v.annotator)}: ${escapeHtml(v.label)}</div>`)
            .join("") +
          `<textarea data-field="note" placeholder="resolution note"></textarea>` +
          `<button data-action="resolve">Resolve</button></div>`
        : "";
    return (
      `<div class="task" data-task-id="${task.id}">` +
      `<div class="meta">${escapeHtml(task.payload.repo)} · ${escapeHtml(task.payload.language)}` +
      ` · ${escapeHtml(task.purpose)}</div>` +
      `<button data-action="toggle-view">${this.state.splitView ? "unified" : "side-by-side"}</button>` +
      diff +
      `<div class="comments">${comments}</div>` +
      `<div class="controls">${controls}</div>` +
      disagreement +
      `</div>`
    );
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}
