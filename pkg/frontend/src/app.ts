import { ApiClient } from "./api";
import { arrowsToFlowSpec } from "./arrows";
import { MaskLayer } from "./mask";
import { JobPoller, PollerView } from "./poller";
import { Arrow, DEFAULT_SETTINGS, Point, ToolKind } from "./types";

const api = new ApiClient("");
const settings = DEFAULT_SETTINGS;

interface SessionState {
  imageId: string | null;
  extent: [number, number];
  arrows: Arrow[];
  maskImageId: string | null;
  flowId: string | null;
  jobId: string | null;
}

const session: SessionState = {
  imageId: null,
  extent: [64, 64],
  arrows: [],
  maskImageId: null,
  flowId: null,
  jobId: null,
};

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;
const banner = $("banner");
const stage = $("stage");
const ZOOM = 6;

let mask: MaskLayer | null = null;
let baseCanvas: HTMLCanvasElement | null = null;
let overlay: HTMLCanvasElement | null = null;
let poller: JobPoller | null = null;
let pendingAnchor: Point | null = null;

function showBanner(text: string, kind: "error" | "ok"): void {
  banner.textContent = text;
  banner.className = kind;
}

function clearBanner(): void {
  banner.className = "";
  banner.textContent = "";
}

function toImage(ev: MouseEvent): Point {
  const rect = (ev.currentTarget as HTMLElement).getBoundingClientRect();
  return { x: (ev.clientX - rect.left) / ZOOM, y: (ev.clientY - rect.top) / ZOOM };
}

function drawArrows(): void {
  if (!overlay) return;
  const ctx = overlay.getContext("2d")!;
  ctx.clearRect(0, 0, overlay.width, overlay.height);
  ctx.lineWidth = 2;
  for (const a of session.arrows) {
    ctx.strokeStyle = "#3d5afe";
    ctx.beginPath();
    ctx.moveTo(a.dragStart.x * ZOOM, a.dragStart.y * ZOOM);
    ctx.lineTo(a.dragEnd.x * ZOOM, a.dragEnd.y * ZOOM);
    ctx.stroke();
    if (a.tool === "scale" || a.tool === "stretch") {
      // unity circle / notch at the parameter-1 locus
      ctx.strokeStyle = "#ffab40";
      ctx.beginPath();
      if (a.tool === "scale") {
        ctx.arc(a.anchor.x * ZOOM, a.anchor.y * ZOOM, settings.unityRadius * ZOOM, 0, 2 * Math.PI);
      } else {
        const d = { x: a.dragEnd.x - a.dragStart.x, y: a.dragEnd.y - a.dragStart.y };
        const len = Math.hypot(d.x, d.y) || 1;
        const ux = d.x / len, uy = d.y / len;
        const nx = a.dragStart.x + ux * settings.unityRadius;
        const ny = a.dragStart.y + uy * settings.unityRadius;
        ctx.moveTo((nx - uy * 1.5) * ZOOM, (ny + ux * 1.5) * ZOOM);
        ctx.lineTo((nx + uy * 1.5) * ZOOM, (ny - ux * 1.5) * ZOOM);
      }
      ctx.stroke();
    }
    if (a.tool === "rotation") {
      ctx.fillStyle = "#ffab40";
      ctx.fillRect(a.anchor.x * ZOOM - 2, a.anchor.y * ZOOM - 2, 4, 4);
    }
  }
  // mask overlay tint
  if (mask && !mask.isEmpty()) {
    ctx.globalAlpha = 0.3;
    ctx.drawImage(mask.canvas, 0, 0, overlay.width, overlay.height);
    ctx.globalAlpha = 1.0;
  }
}

async function loadImageFile(file: File): Promise<void> {
  const bytes = await file.arrayBuffer();
  session.imageId = await api.uploadImage(bytes);
  const img = new Image();
  img.src = api.imageUrl(session.imageId);
  await img.decode();
  session.extent = [img.naturalHeight, img.naturalWidth];
  stage.innerHTML = "";
  baseCanvas = document.createElement("canvas");
  baseCanvas.className = "base";
  baseCanvas.width = img.naturalWidth * ZOOM;
  baseCanvas.height = img.naturalHeight * ZOOM;
  const bctx = baseCanvas.getContext("2d")!;
  bctx.imageSmoothingEnabled = false;
  bctx.drawImage(img, 0, 0, baseCanvas.width, baseCanvas.height);
  overlay = document.createElement("canvas");
  overlay.width = baseCanvas.width;
  overlay.height = baseCanvas.height;
  stage.append(baseCanvas, overlay);
  mask = new MaskLayer(img.naturalWidth, img.naturalHeight);
  session.arrows = [];
  session.maskImageId = null;
  bindStageEvents(overlay);
  drawArrows();
  clearBanner();
}

function currentTool(): ToolKind | "mask" {
  return ($("tool") as HTMLSelectElement).value as ToolKind | "mask";
}

function bindStageEvents(el: HTMLCanvasElement): void {
  let dragStart: Point | null = null;
  el.onmousedown = (ev) => {
    const p = toImage(ev);
    const tool = currentTool();
    if (tool === "mask") {
      mask?.beginStroke(p.x, p.y);
      session.maskImageId = null; // repainting invalidates the upload
      return;
    }
    if (tool === "rotation" && pendingAnchor === null) {
      pendingAnchor = p; // first click defines the center of rotation
      drawArrows();
      return;
    }
    dragStart = p;
  };
  el.onmousemove = (ev) => {
    const p = toImage(ev);
    if (currentTool() === "mask") {
      mask?.paint(p.x, p.y);
      drawArrows();
    }
  };
  el.onmouseup = async (ev) => {
    const p = toImage(ev);
    const tool = currentTool();
    if (tool === "mask") {
      mask?.endStroke();
      drawArrows();
      return;
    }
    if (dragStart === null) return;
    const start = dragStart;
    dragStart = null;
    if (Math.hypot(p.x - start.x, p.y - start.y) < 0.5) {
      showBanner("drag ignored: zero length", "error");
      return;
    }
    const anchor = tool === "rotation" && pendingAnchor !== null ? pendingAnchor : start;
    pendingAnchor = null;
    session.arrows.push({ tool: tool as ToolKind, anchor, dragStart: start, dragEnd: p });
    drawArrows();
    await synthesize(); // preview regenerates whenever arrows change
  };
}

async function attachMask(): Promise<void> {
  if (!mask || mask.isEmpty()) return;
  if (session.maskImageId === null) {
    session.maskImageId = await api.uploadImage(await mask.toBlob());
  }
  for (const a of session.arrows) a.maskImageId = session.maskImageId;
}

async function synthesize(): Promise<void> {
  try {
    await attachMask();
    const spec = arrowsToFlowSpec(session.arrows, session.extent, settings);
    session.flowId = await api.synthesizeFlow(spec);
    ($("flow-preview") as HTMLImageElement).src = api.flowPreviewUrl(session.flowId);
    clearBanner();
  } catch (err) {
    showBanner(String(err), "error");
  }
}

function drawLossCurve(view: PollerView): void {
  const canvas = $("loss") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pts = view.losses.filter((p) => p.total !== null);
  if (pts.length < 2) return;
  const max = Math.max(...pts.map((p) => p.total!), 1e-9);
  ctx.strokeStyle = "#3d5afe";
  ctx.beginPath();
  pts.forEach((p, i) => {
    const x = (i / (pts.length - 1)) * (canvas.width - 8) + 4;
    const y = canvas.height - 4 - (p.total! / max) * (canvas.height - 8);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

function renderCompare(jobId: string): void {
  const box = $("compare");
  box.innerHTML = "";
  if (!session.imageId) return;
  const src = new Image();
  src.src = api.imageUrl(session.imageId);
  const out = new Image();
  out.src = api.resultUrl(jobId);
  const wrap = document.createElement("div");
  wrap.className = "overlay";
  wrap.append(out);
  box.append(src, wrap);
  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = "0";
  slider.max = "100";
  slider.value = "50";
  slider.oninput = () => {
    wrap.style.width = `${(Number(slider.value) / 100) * src.width}px`;
  };
  box.append(slider);
}

function onPollUpdate(view: PollerView): void {
  const progress = $("progress") as HTMLProgressElement;
  progress.max = Math.max(view.progress.total, 1);
  progress.value = view.progress.t;
  drawLossCurve(view);
  const cancelBtn = $("cancel") as HTMLButtonElement;
  if (view.phase === "running" || view.phase === "queued") {
    cancelBtn.disabled = false;
    return;
  }
  cancelBtn.disabled = true;
  if (view.phase === "done" && session.jobId) {
    showBanner("done", "ok");
    renderCompare(session.jobId);
    const link = $("trace-link") as HTMLAnchorElement;
    link.href = api.traceUrl(session.jobId);
    link.style.display = "inline";
  } else if (view.phase === "cancelled") {
    showBanner("job cancelled", "error");
  } else if (view.phase === "failed") {
    showBanner(`job failed: ${view.error ?? "unknown"}`, "error");
    if (session.jobId) {
      const link = $("trace-link") as HTMLAnchorElement;
      link.href = api.traceUrl(session.jobId);
      link.style.display = "inline";
    }
  }
}

async function runJob(): Promise<void> {
  if (!session.imageId || !session.flowId) {
    showBanner("load an image and synthesize a flow first", "error");
    return;
  }
  try {
    const steps = Number(($("steps") as HTMLInputElement).value) || 100;
    const r = await api.submitJob({
      kind: "sample",
      source_image_id: session.imageId,
      flow_id: session.flowId,
      num_steps: steps,
    });
    session.jobId = r.job_id;
    poller?.stop();
    poller = new JobPoller(api, r.job_id, onPollUpdate);
    poller.start();
    clearBanner();
  } catch (err) {
    showBanner(String(err), "error");
  }
}

($("file") as HTMLInputElement).onchange = (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (file) void loadImageFile(file);
};
$("undo").onclick = () => {
  session.arrows.pop();
  drawArrows();
  void synthesize();
};
$("clear-mask").onclick = () => {
  mask?.clear();
  session.maskImageId = null;
  for (const a of session.arrows) delete a.maskImageId;
  drawArrows();
};
$("synthesize").onclick = () => void synthesize();
$("run").onclick = () => void runJob();
$("cancel").onclick = () => void poller?.cancel();
