"""Local HTTP job service: image/flow artifact storage, flow synthesis, and
guided-sampling jobs with polling progress and cancellation.

Artifacts are content-addressed on the filesystem; the job table lives behind
a single lock and a bounded thread pool runs the sampling work.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel, ConfigDict, Field

from . import bench
from .diffusion import EmpiricalDataset, make_schedule
from .estimator import estimate_flow
from .flowio import read_flo, visualize_flow, write_flo
from .flowsynth import FlowSpec
from .guidance import GuidanceConfig, config_from_dict, guided_sample, rerank
from .images import load_mask_png, load_png, save_png

JOB_KINDS = ("sample", "estimate", "baseline", "eval")


class PrimitiveModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: str
    params: dict
    mask_image_id: str | None = None
    mask_rect: list[int] | None = None


class SynthesizeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    extent: list[int] = Field(min_length=2, max_length=2)
    dilation_radius: int = 2
    primitives: list[PrimitiveModel] = Field(default_factory=list)


class BaselineModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    method: str = "sdedit"
    t0_fraction: float = 0.8
    resample_steps: int = 10


class JobRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: str
    source_image_id: str | None = None
    flow_id: str | None = None
    target_image_id: str | None = None  # second frame for kind=estimate
    config: dict = Field(default_factory=dict)
    num_steps: int = 100
    baseline: BaselineModel | None = None


@dataclasses.dataclass
class Job:
    id: str
    kind: str
    request: dict
    state: str = "queued"  # queued -> running -> done | failed
    progress: dict = dataclasses.field(default_factory=lambda: {"t": 0, "k": 0, "total": 0})
    losses: dict = dataclasses.field(
        default_factory=lambda: {"flow": None, "color": None, "total": None}
    )
    error: str | None = None
    outputs: dict = dataclasses.field(default_factory=dict)
    cancel: threading.Event = dataclasses.field(default_factory=threading.Event)


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


class Store:
    """Content-addressed artifact directories plus the synchronized job table."""

    def __init__(self, data_dir, dataset: EmpiricalDataset, max_workers: int):
        self.root = Path(data_dir)
        for sub in ("images", "flows", "jobs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.dataset = dataset
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()
        self.pool = ThreadPoolExecutor(max_workers=max_workers)

    def image_path(self, image_id: str) -> Path:
        p = self.root / "images" / f"{image_id}.png"
        if not p.exists():
            raise HTTPException(404, f"image {image_id} not found")
        return p

    def flow_path(self, flow_id: str) -> Path:
        p = self.root / "flows" / f"{flow_id}.flo"
        if not p.exists():
            raise HTTPException(404, f"flow {flow_id} not found")
        return p

    def get_job(self, job_id: str) -> Job:
        with self.lock:
            job = self.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"job {job_id} not found")
        return job


def _run_job(store: Store, job: Job) -> None:
    with store.lock:
        if job.state != "queued":
            return
        job.state = "running"
    try:
        out_dir = store.root / "jobs" / job.id
        out_dir.mkdir(parents=True, exist_ok=True)
        req = job.request
        if job.kind == "estimate":
            _job_estimate(store, job, req, out_dir)
        else:
            _job_sample(store, job, req, out_dir)
        with store.lock:
            job.state = "done"
    except Exception as exc:  # surface any failure as job state
        with store.lock:
            job.state = "failed"
            job.error = "cancelled" if "cancelled" in str(exc) else str(exc)


def _job_estimate(store: Store, job: Job, req: dict, out_dir: Path) -> None:
    I1 = load_png(store.image_path(req["source_image_id"]))
    I2 = load_png(store.image_path(req["target_image_id"]))
    with torch.no_grad():
        f = estimate_flow(I1, I2)
    write_flo(out_dir / "flow.flo", f)
    save_png(out_dir / "result.png", visualize_flow(f))
    with store.lock:
        job.progress = {"t": 1, "k": 1, "total": 1}
        job.outputs = {"result": "result.png", "flow": "flow.flo"}


def _job_sample(store: Store, job: Job, req: dict, out_dir: Path) -> None:
    x_star = load_png(store.image_path(req["source_image_id"]))
    f_target = read_flo(store.flow_path(req["flow_id"]))
    if f_target.shape[:2] != x_star.shape[:2]:
        raise ValueError("flow extent does not match source image")
    cfg = config_from_dict(req.get("config", {}))
    schedule = make_schedule(req.get("num_steps", 100))

    if job.kind == "baseline":
        b = req.get("baseline") or {}
        method = b.get("method", "sdedit")
        if method == "sdedit":
            t0 = int(round(b.get("t0_fraction", 0.8) * schedule.T))
            img = bench.baseline_sdedit(x_star, f_target, t0, store.dataset, schedule, cfg.seed)
        elif method == "repaint":
            img = bench.baseline_repaint(
                x_star, f_target, b.get("resample_steps", 10), store.dataset, schedule, cfg.seed
            )
        else:
            raise ValueError(f"unknown baseline method {method!r}")
        save_png(out_dir / "result.png", img)
        with store.lock:
            job.progress = {"t": 0, "k": 0, "total": schedule.T}
            job.outputs = {"result": "result.png"}
        return

    def on_progress(done, total, trace):
        e = trace.entries[-1]
        best = min(range(len(e.total_loss)), key=lambda i: e.total_loss[i])
        with store.lock:
            job.progress = {"t": done, "k": e.k, "total": total}
            job.losses = {
                "flow": e.flow_loss[best],
                "color": e.color_loss[best],
                "total": e.total_loss[best],
            }

    imgs, trace = guided_sample(
        x_star, f_target, store.dataset, schedule, cfg,
        progress_cb=on_progress, cancel=job.cancel,
    )
    finals = trace.final_losses()
    order = rerank([(imgs[i], finals[i], trace.diverged[i]) for i in range(imgs.shape[0])])
    save_png(out_dir / "result.png", imgs[order[0]])
    with open(out_dir / "trace.json", "w") as fh:
        json.dump(
            {
                "ranking": order,
                "diverged": trace.diverged,
                "final_losses": finals,
                "entries": trace.to_records(),
            },
            fh,
        )
    with store.lock:
        job.progress = {"t": schedule.T, "k": cfg.recursion_steps, "total": schedule.T}
        job.outputs = {"result": "result.png", "trace": "trace.json"}


def create_app(
    max_workers: int = 2,
    data_dir=None,
    dataset: EmpiricalDataset | None = None,
) -> FastAPI:
    if data_dir is None:
        data_dir = tempfile.mkdtemp(prefix="motionedit-")
    if dataset is None:
        dataset = bench.gen_shapes_dataset(bench.ShapesDatasetSpec())
    store = Store(data_dir, dataset, max_workers)
    app = FastAPI(title="motionedit", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.post("/api/images")
    async def upload_image(request: Request):
        data = await request.body()
        if not data:
            raise HTTPException(400, "empty upload")
        image_id = _digest(data)
        path = store.root / "images" / f"{image_id}.png"
        path.write_bytes(data)
        try:
            load_png(path)
        except Exception as exc:
            path.unlink()
            raise HTTPException(400, f"not a readable PNG: {exc}")
        return {"image_id": image_id}

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        return Response(store.image_path(image_id).read_bytes(), media_type="image/png")

    @app.post("/api/flows/synthesize")
    def synthesize(req: SynthesizeRequest):
        extent = (req.extent[0], req.extent[1])
        spec = FlowSpec(extent=extent, dilation_radius=req.dilation_radius)
        from .flowsynth import apply_spec

        for prim in req.primitives:
            mask = None
            if prim.mask_image_id is not None:
                mask = load_mask_png(store.image_path(prim.mask_image_id))
            elif prim.mask_rect is not None:
                if len(prim.mask_rect) != 4:
                    raise HTTPException(400, "mask_rect must be [r0, c0, r1, c1]")
                r0, c0, r1, c1 = prim.mask_rect
                mask = torch.zeros(extent)
                mask[r0:r1, c0:c1] = 1.0
            try:
                spec.add(prim.kind, prim.params, mask)
            except (ValueError, KeyError) as exc:
                raise HTTPException(400, f"primitive: {exc}")
        try:
            flow = apply_spec(spec)
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(400, f"spec: {exc}")
        tmp = store.root / "flows" / "_tmp.flo"
        write_flo(tmp, flow)
        data = tmp.read_bytes()
        tmp.unlink()
        flow_id = _digest(data)
        (store.root / "flows" / f"{flow_id}.flo").write_bytes(data)
        return {"flow_id": flow_id}

    @app.get("/api/flows/{flow_id}")
    def get_flow(flow_id: str):
        return Response(
            store.flow_path(flow_id).read_bytes(), media_type="application/octet-stream"
        )

    @app.get("/api/flows/{flow_id}/preview")
    def flow_preview(flow_id: str):
        f = read_flo(store.flow_path(flow_id))
        buf = io.BytesIO()
        from PIL import Image as PILImage

        from .grid import to_display

        arr = (to_display(visualize_flow(f)).clamp(0, 1).numpy() * 255).round().astype("uint8")
        PILImage.fromarray(arr).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.post("/api/jobs")
    def submit_job(req: JobRequest):
        if req.kind not in JOB_KINDS:
            raise HTTPException(400, f"kind must be one of {JOB_KINDS}")
        if req.kind == "eval":
            raise HTTPException(400, "eval jobs run via the CLI, not the service")
        if req.kind == "estimate":
            if not (req.source_image_id and req.target_image_id):
                raise HTTPException(400, "estimate needs source_image_id and target_image_id")
            store.image_path(req.source_image_id)
            store.image_path(req.target_image_id)
        else:
            if not (req.source_image_id and req.flow_id):
                raise HTTPException(400, f"{req.kind} needs source_image_id and flow_id")
            store.image_path(req.source_image_id)
            store.flow_path(req.flow_id)
        try:
            config_from_dict(req.config)
        except (ValueError, TypeError) as exc:
            raise HTTPException(400, f"config: {exc}")
        payload = req.model_dump()
        job_id = _digest(json.dumps(payload, sort_keys=True).encode())
        with store.lock:
            existing = store.jobs.get(job_id)
            if existing is not None:
                return {"job_id": job_id, "state": existing.state}
            job = Job(id=job_id, kind=req.kind, request=payload)
            store.jobs[job_id] = job
        store.pool.submit(_run_job, store, job)
        return {"job_id": job_id, "state": "queued"}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = store.get_job(job_id)
        with store.lock:
            return {
                "id": job.id,
                "kind": job.kind,
                "state": job.state,
                "progress": dict(job.progress),
                "losses": dict(job.losses),
                "error": job.error,
                "outputs": dict(job.outputs),
            }

    @app.get("/api/jobs/{job_id}/result")
    def job_result(job_id: str):
        job = store.get_job(job_id)
        if job.state != "done":
            raise HTTPException(409, f"job is {job.state}")
        path = store.root / "jobs" / job.id / job.outputs["result"]
        return Response(path.read_bytes(), media_type="image/png")

    @app.get("/api/jobs/{job_id}/trace")
    def job_trace(job_id: str):
        job = store.get_job(job_id)
        if job.state != "done":
            raise HTTPException(409, f"job is {job.state}")
        if "trace" not in job.outputs:
            raise HTTPException(404, "job has no trace artifact")
        path = store.root / "jobs" / job.id / job.outputs["trace"]
        return json.loads(path.read_text())

    @app.delete("/api/jobs/{job_id}")
    def cancel_job(job_id: str):
        job = store.get_job(job_id)
        job.cancel.set()
        with store.lock:
            if job.state == "queued":
                job.state = "failed"
                job.error = "cancelled"
        # running jobs notice the event at the next step boundary
        deadline = time.time() + 30.0
        while time.time() < deadline:
            with store.lock:
                if job.state in ("done", "failed"):
                    break
            time.sleep(0.05)
        with store.lock:
            return {"id": job.id, "state": job.state, "error": job.error}

    return app
