import { FlowSpecDoc, JobStatus } from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the job service HTTP API. */
export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init)
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const r = await this.fetchImpl(this.base + path, init);
    if (!r.ok) {
      let detail = r.statusText;
      try {
        const body = await r.json();
        if (body && typeof body.detail === "string") detail = body.detail;
        else detail = JSON.stringify(body);
      } catch {
        /* non-JSON error body */
      }
      throw new Error(`${r.status}: ${detail}`);
    }
    return (await r.json()) as T;
  }

  async uploadImage(png: Blob | ArrayBuffer): Promise<string> {
    const body = png instanceof Blob ? png : new Blob([png]);
    const r = await this.json<{ image_id: string }>("/api/images", {
      method: "POST",
      body,
    });
    return r.image_id;
  }

  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${imageId}`;
  }

  async synthesizeFlow(spec: FlowSpecDoc): Promise<string> {
    const r = await this.json<{ flow_id: string }>("/api/flows/synthesize", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(spec),
    });
    return r.flow_id;
  }

  async flowBytes(flowId: string): Promise<ArrayBuffer> {
    const r = await this.fetchImpl(`${this.base}/api/flows/${flowId}`);
    if (!r.ok) throw new Error(`${r.status}`);
    return await r.arrayBuffer();
  }

  flowPreviewUrl(flowId: string): string {
    return `${this.base}/api/flows/${flowId}/preview`;
  }

  async submitJob(payload: Record<string, unknown>): Promise<{ job_id: string; state: string }> {
    return await this.json("/api/jobs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async jobStatus(jobId: string): Promise<JobStatus> {
    return await this.json(`/api/jobs/${jobId}`);
  }

  resultUrl(jobId: string): string {
    return `${this.base}/api/jobs/${jobId}/result`;
  }

  traceUrl(jobId: string): string {
    return `${this.base}/api/jobs/${jobId}/trace`;
  }

  async cancelJob(jobId: string): Promise<void> {
    await this.json(`/api/jobs/${jobId}`, { method: "DELETE" });
  }
}
