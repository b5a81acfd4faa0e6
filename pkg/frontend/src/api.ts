/** Typed client for the annotation service API. */

export interface DatasetRecord {
  id: string;
  name: string;
  language: string;
  created_at: number;
  n_samples: number;
  assigned?: boolean;
}

export interface SampleRecord {
  id: string;
  dataset_id: string;
  sentence_id: string;
  original_text: string;
  asr_text: string;
  final_text: string | null;
  audio_path: string;
  duration_s: number;
  wer: number;
  status: string;
  lock_annotator: string | null;
  lock_expiry: number | null;
  audio_url: string;
}

export interface JobRecord {
  id: string;
  kind: string;
  status: "pending" | "running" | "done" | "failed";
  error: string | null;
  result: Record<string, unknown> | null;
}

export interface StatsRecord {
  n_samples: number;
  n_annotated: number;
  n_edited: number;
  n_discarded: number;
  n_pending: number;
  n_locked: number;
  percent_annotated: number;
  percent_edited: number;
  percent_discarded: number;
  discard_reasons: Record<string, number>;
  total_duration_s: number;
  annotated_duration_s: number;
  percent_assigned: number | null;
  duration_before_match_s: number | null;
  duration_after_match_s: number | null;
  duration_after_trim_s: number | null;
}

export interface Identity {
  email: string;
  role: "admin" | "annotator";
}

export interface AnnotationBody {
  action: "approve" | "discard";
  final_text?: string;
  reasons?: string[];
  feedback?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ForgeApi {
  constructor(
    public baseUrl: string,
    private token: string,
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    return { Authorization: `Bearer ${this.token}`, ...extra };
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<{ status: number; data: T | null }> {
    const init: RequestInit = { method, headers: this.headers() };
    if (body instanceof FormData) {
      init.body = body;
    } else if (typeof body === "string") {
      init.body = body;
      (init.headers as Record<string, string>)["Content-Type"] = "text/plain";
    } else if (body !== undefined) {
      init.body = JSON.stringify(body);
      (init.headers as Record<string, string>)["Content-Type"] = "application/json";
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (response.status === 204) {
      return { status: 204, data: null };
    }
    if (!response.ok) {
      let code = "error";
      let message = `HTTP ${response.status}`;
      try {
        const payload = (await response.json()) as { code?: string; message?: string };
        code = payload.code ?? code;
        message = payload.message ?? message;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, code, message);
    }
    return { status: response.status, data: (await response.json()) as T };
  }

  async health(): Promise<boolean> {
    try {
      const response = await this.fetchFn(`${this.baseUrl}/api/health`, {});
      return response.ok;
    } catch {
      return false;
    }
  }

  async me(): Promise<Identity> {
    return (await this.request<Identity>("GET", "/api/me")).data!;
  }

  async listDatasets(): Promise<DatasetRecord[]> {
    return (await this.request<DatasetRecord[]>("GET", "/api/datasets")).data!;
  }

  async createDataset(name: string, language: string): Promise<string> {
    const result = await this.request<{ id: string }>("POST", "/api/datasets", {
      name,
      language,
    });
    return result.data!.id;
  }

  async uploadScript(datasetId: string, scriptJsonl: string): Promise<number> {
    const result = await this.request<{ sentences: number }>(
      "POST",
      `/api/datasets/${datasetId}/script`,
      scriptJsonl,
    );
    return result.data!.sentences;
  }

  async uploadBatch(
    datasetId: string,
    file: { name: string; data: Blob },
    truth?: { name: string; data: Blob },
  ): Promise<string> {
    const form = new FormData();
    form.append("file", file.data, file.name);
    if (truth) {
      form.append("truth", truth.data, truth.name);
    }
    const result = await this.request<{ job_id: string }>(
      "POST",
      `/api/datasets/${datasetId}/batches`,
      form,
    );
    return result.data!.job_id;
  }

  async jobStatus(jobId: string): Promise<JobRecord> {
    return (await this.request<JobRecord>("GET", `/api/jobs/${jobId}`)).data!;
  }

  /** Poll a job until it is done or failed; rejects on failure or timeout. */
  async pollJob(
    jobId: string,
    options: { intervalMs?: number; timeoutMs?: number; onTick?: (job: JobRecord) => void } = {},
  ): Promise<JobRecord> {
    const interval = options.intervalMs ?? 2000;
    const deadline = Date.now() + (options.timeoutMs ?? 120_000);
    for (;;) {
      const job = await this.jobStatus(jobId);
      options.onTick?.(job);
      if (job.status === "done") {
        return job;
      }
      if (job.status === "failed") {
        throw new ApiError(500, "job_failed", job.error ?? "job failed");
      }
      if (Date.now() > deadline) {
        throw new ApiError(408, "timeout", `job ${jobId} did not finish in time`);
      }
      await new Promise((resolve) => setTimeout(resolve, interval));
    }
  }

  async assignAnnotator(datasetId: string, email: string): Promise<void> {
    await this.request("POST", `/api/datasets/${datasetId}/assignments`, {
      annotator_id: email,
    });
  }

  async unassignAnnotator(datasetId: string, email: string): Promise<void> {
    await this.request("DELETE", `/api/datasets/${datasetId}/assignments/${email}`);
  }

  /** Lock and return the next sample, or null when the queue is empty. */
  async nextSample(datasetId: string): Promise<SampleRecord | null> {
    const result = await this.request<SampleRecord>(
      "POST",
      `/api/datasets/${datasetId}/next-sample`,
    );
    return result.status === 204 ? null : result.data;
  }

  async submitAnnotation(sampleId: string, body: AnnotationBody): Promise<SampleRecord> {
    return (
      await this.request<SampleRecord>("POST", `/api/samples/${sampleId}/annotation`, body)
    ).data!;
  }

  async releaseSample(sampleId: string): Promise<void> {
    await this.request("POST", `/api/samples/${sampleId}/release`);
  }

  /** Audio requires the auth header, so fetch bytes rather than linking. */
  async fetchAudio(sampleId: string): Promise<Blob> {
    const response = await this.fetchFn(`${this.baseUrl}/api/samples/${sampleId}/audio`, {
      headers: this.headers(),
    });
    if (!response.ok) {
      throw new ApiError(response.status, "audio", `audio fetch failed (${response.status})`);
    }
    return response.blob();
  }

  async stats(datasetId: string): Promise<StatsRecord> {
    return (await this.request<StatsRecord>("GET", `/api/datasets/${datasetId}/stats`)).data!;
  }

  async exportArchive(datasetId: string): Promise<Blob> {
    const response = await this.fetchFn(`${this.baseUrl}/api/datasets/${datasetId}/export`, {
      headers: this.headers(),
    });
    if (!response.ok) {
      throw new ApiError(response.status, "export", `export failed (${response.status})`);
    }
    return response.blob();
  }
}
