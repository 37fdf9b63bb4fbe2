import { ApiClient } from "./api";
import { JobStatus } from "./types";

export interface LossPoint {
  t: number;
  flow: number | null;
  color: number | null;
  total: number | null;
}

export interface PollerView {
  phase: "idle" | "queued" | "running" | "done" | "failed" | "cancelled";
  progress: { t: number; total: number };
  losses: LossPoint[];
  error: string | null;
}

/** Job polling state machine: drives the progress bar, loss curve, and the
 * terminal banner. Pure state transitions so fixtures can feed it directly. */
export class JobPoller {
  view: PollerView = { phase: "idle", progress: { t: 0, total: 0 }, losses: [], error: null };
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private api: ApiClient,
    private jobId: string,
    private onUpdate: (view: PollerView) => void,
    private intervalMs = 500
  ) {}

  /** Apply one status snapshot; returns true while polling should continue. */
  apply(status: JobStatus): boolean {
    const v = this.view;
    v.progress = { t: status.progress.t, total: status.progress.total };
    if (status.state === "running" || status.state === "queued") {
      v.phase = status.state;
      const last = v.losses[v.losses.length - 1];
      if (status.losses.total !== null && (!last || last.t !== status.progress.t)) {
        v.losses.push({ t: status.progress.t, ...status.losses });
      }
      this.onUpdate(v);
      return true;
    }
    if (status.state === "done") {
      v.phase = "done";
    } else {
      v.phase = status.error === "cancelled" ? "cancelled" : "failed";
      v.error = status.error;
    }
    this.onUpdate(v);
    return false;
  }

  async tick(): Promise<boolean> {
    let status: JobStatus;
    try {
      status = await this.api.jobStatus(this.jobId);
    } catch (err) {
      this.view.phase = "failed";
      this.view.error = String(err);
      this.onUpdate(this.view);
      return false;
    }
    return this.apply(status);
  }

  start(): void {
    const loop = async () => {
      if (await this.tick()) {
        this.timer = setTimeout(loop, this.intervalMs);
      }
    };
    void loop();
  }

  stop(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
  }

  async cancel(): Promise<void> {
    await this.api.cancelJob(this.jobId);
  }
}
