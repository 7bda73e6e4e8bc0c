// Typed client for the annotation service HTTP API. All UI state derives
// from these responses; the client itself holds no label authority.

export interface Vote {
  annotator: string;
  label: string;
  cast_at: string;
}

export interface Consensus {
  final_label: string;
  method: string;
  note: string | null;
  resolved_at: string;
}

export interface CommentEntry {
  role: string;
  body: string;
  posted_at: string;
}

export interface TaskPayload {
  hunk_diff: string;
  comments: CommentEntry[];
  repo: string;
  language: string;
}

export interface Task {
  id: number;
  instance_id: string;
  purpose: string;
  required_votes: number;
  status: string;
  payload: TaskPayload;
  votes: Vote[];
  consensus?: Consensus;
}

export interface KappaStats {
  kappa: number | null;
  items: number;
}

export interface IterationReport {
  iteration: number;
  batch_size: number;
  bucket_all_positive: number;
  bucket_mixed: number;
  bucket_all_negative: number;
  sampled_for_annotation: number;
  new_human_labels: number;
  ensemble_metrics: {
    accuracy: number;
    precision: number;
    recall: number;
    f1: number;
  };
  dynamic_f1: number;
  stop: boolean;
  stop_reason: string | null;
}

export interface AuditEvent {
  seq: number;
  at: string;
  kind: string;
  [key: string]: unknown;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T | null> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (resp.status === 204) return null;
    const body = await resp.text();
    const data = body ? JSON.parse(body) : null;
    if (!resp.ok) {
      const code = data && data.error ? String(data.error) : "HttpError";
      const message = data && data.message ? String(data.message) : body;
      throw new ApiError(resp.status, code, message);
    }
    return data as T;
  }

  claimNext(annotator: string, purpose: string): Promise<Task | null> {
    const q = new URLSearchParams({ annotator, purpose });
    return this.request<Task>(`/tasks/next?${q}`);
  }

  getTask(taskId: number): Promise<Task> {
    return this.request<Task>(`/tasks/${taskId}`) as Promise<Task>;
  }

  async vote(taskId: number, annotator: string, label: string): Promise<string> {
    const data = await this.request<{ status: string }>(`/tasks/${taskId}/vote`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator, label }),
    });
    return data!.status;
  }

  resolve(taskId: number, label: string, note: string): Promise<Consensus | null> {
    return this.request<Consensus>(`/tasks/${taskId}/resolve`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ label, note }),
    });
  }

  kappa(purpose: string): Promise<KappaStats> {
    const q = new URLSearchParams({ purpose });
    return this.request<KappaStats>(`/stats/kappa?${q}`) as Promise<KappaStats>;
  }

  async currentIteration(): Promise<IterationReport | null> {
    const data = await this.request<IterationReport | Record<string, never>>(
      "/iterations/current",
    );
    if (!data || Object.keys(data).length === 0) return null;
    return data as IterationReport;
  }

  taxonomy(): Promise<string[]> {
    return this.request<string[]>("/taxonomy") as Promise<string[]>;
  }

  audit(limit = 50): Promise<AuditEvent[]> {
    return this.request<AuditEvent[]>(`/audit?limit=${limit}`) as Promise<AuditEvent[]>;
  }
}
