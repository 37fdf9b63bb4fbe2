"""Procedural shapes datasets, translation benchmark, baselines, metrics,
ablations, motion transfer, and flow-scaled sequences."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from . import grid
from .diffusion import (
    EmpiricalDataset,
    NoiseSchedule,
    ddim_step,
    epsilon_hat,
    noise_source,
)
from .estimator import estimate_flow, heldout_estimator
from .guidance import GuidanceConfig, guided_sample, rerank
from .images import save_png


@dataclass(frozen=True)
class ShapesDatasetSpec:
    canvas: int = 64
    background_seed: int = 1234
    shape_kind: str = "square"  # or "disk"
    shape_size: int = 12
    # display range; chosen bright and strongly chromatic so the shape is
    # visible to the luma-only estimator while color errors stay detectable
    shape_color: tuple[float, float, float] = (1.0, 0.85, 0.2)
    grid_origin: tuple[int, int] = (4, 4)  # (row, col) of first position
    grid_stride: int = 4
    grid_shape: tuple[int, int] = (8, 8)  # rows x cols of admissible positions

    def positions(self) -> list[tuple[int, int]]:
        r0, c0 = self.grid_origin
        return [
            (r0 + i * self.grid_stride, c0 + j * self.grid_stride)
            for i in range(self.grid_shape[0])
            for j in range(self.grid_shape[1])
        ]


def background_texture(spec: ShapesDatasetSpec) -> torch.Tensor:
    """Fixed smooth texture shared by every dataset image, diffusion range."""
    rng = np.random.default_rng(spec.background_seed)
    t = ndimage.gaussian_filter(rng.standard_normal((spec.canvas, spec.canvas)), 2.0, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min())  # [0, 1]
    t = 0.25 + 0.5 * t  # keep headroom for the shape to stand out
    tint = np.array([1.0, 0.95, 0.85])
    rgb = t[..., None] * tint[None, None, :]
    return torch.from_numpy((rgb * 2.0 - 1.0).astype(np.float32))


def shape_footprint(spec: ShapesDatasetSpec, position: tuple[int, int]) -> torch.Tensor:
    """Binary (H, W) mask of the shape placed at ``position`` (top-left)."""
    r, c = position
    s = spec.shape_size
    if r < 0 or c < 0 or r + s > spec.canvas or c + s > spec.canvas:
        raise ValueError(f"placement {position} out of bounds")
    m = torch.zeros(spec.canvas, spec.canvas)
    if spec.shape_kind == "square":
        m[r : r + s, c : c + s] = 1.0
    elif spec.shape_kind == "disk":
        yy, xx = torch.meshgrid(
            torch.arange(spec.canvas, dtype=torch.float32),
            torch.arange(spec.canvas, dtype=torch.float32),
            indexing="ij",
        )
        cy, cx = r + (s - 1) / 2, c + (s - 1) / 2
        m[(yy - cy) ** 2 + (xx - cx) ** 2 <= (s / 2) ** 2] = 1.0
    else:
        raise ValueError(f"unknown shape kind {spec.shape_kind!r}")
    return m


def gen_shapes_dataset(spec: ShapesDatasetSpec) -> EmpiricalDataset:
    """One image per admissible position: the shape composited over the fixed
    background, hard-edged so integer-translation splats are exact."""
    bg = background_texture(spec)
    color = torch.tensor(spec.shape_color, dtype=torch.float32) * 2.0 - 1.0
    images, meta = [], []
    for pos in spec.positions():
        m = shape_footprint(spec, pos).unsqueeze(-1)
        img = bg * (1 - m) + color.reshape(1, 1, 3) * m
        images.append(img)
        meta.append({"position": list(pos)})
    return EmpiricalDataset(images=torch.stack(images), metadata=meta)


def save_dataset(dataset: EmpiricalDataset, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(dataset)):
        name = f"img_{i:04d}.png"
        save_png(out_dir / name, dataset.images[i])
        entries.append({"path": name, "metadata": dataset.metadata[i]})
    manifest = out_dir / "manifest.json"
    with open(manifest, "w") as fh:
        json.dump({"images": entries}, fh, indent=1)
    return manifest


@dataclass
class BenchmarkCase:
    source_index: int
    target_index: int
    displacement: tuple[int, int]  # (du, dv) in px
    flow: torch.Tensor  # (H, W, 2) masked target flow
    instruction: str = ""  # placeholder mirroring text-annotated benchmarks


def gen_translation_benchmark(
    dataset: EmpiricalDataset,
    spec: ShapesDatasetSpec,
    count: int,
    magnitude_range: tuple[float, float] = (3.0, 10.0),
    seed: int = 0,
    flow_dilation: int = 2,
) -> list[BenchmarkCase]:
    """Random-direction translations snapped to the dataset's position grid so
    a ground-truth displaced image exists; flow masked to the (dilated) shape
    footprint."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    positions = spec.positions()
    pos_to_idx = {tuple(p): i for i, p in enumerate(positions)}
    lo, hi = magnitude_range
    cases = []
    attempts = 0
    while len(cases) < count:
        attempts += 1
        if attempts > 10000 * count:
            raise ValueError("no admissible destination found")
        src = int(rng.integers(len(positions)))
        r, c = positions[src]
        if hi == 0.0:
            du = dv = 0
        else:
            ang = rng.uniform(0, 2 * math.pi)
            mag = rng.uniform(lo, hi)
            du = int(round(mag * math.cos(ang) / spec.grid_stride)) * spec.grid_stride
            dv = int(round(mag * math.sin(ang) / spec.grid_stride)) * spec.grid_stride
            m = math.hypot(du, dv)
            if not (max(lo, 1e-9) <= m <= hi + spec.grid_stride):
                continue
        dest = (r + dv, c + du)
        if tuple(dest) not in pos_to_idx:
            continue
        mask = grid.dilate_mask(shape_footprint(spec, (r, c)), flow_dilation)
        flow = torch.zeros(spec.canvas, spec.canvas, 2)
        flow[..., 0] = du * mask
        flow[..., 1] = dv * mask
        cases.append(
            BenchmarkCase(
                source_index=src,
                target_index=pos_to_idx[tuple(dest)],
                displacement=(du, dv),
                flow=flow,
            )
        )
    return cases


def baseline_sdedit(
    source: torch.Tensor,
    f_target: torch.Tensor,
    t0: int,
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> torch.Tensor:
    """Forward-splat the source by the target flow, noise to t0, then denoise
    unguided back to t = 0."""
    if not (0 <= t0 < schedule.T):
        raise ValueError("t0 must be in [0, T)")
    warped, _ = grid.forward_splat(source, f_target, fill="nearest")
    x = noise_source(warped, t0, schedule, seed)
    for t in range(t0, 0, -1):
        eps = epsilon_hat(x, t, dataset, schedule)
        x = ddim_step(x, eps, t, t - 1, schedule)
    return x


def baseline_repaint(
    source: torch.Tensor,
    f_target: torch.Tensor,
    resample_steps: int,
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    seed: int = 0,
) -> torch.Tensor:
    """Forward-splat, then RePaint-style inpainting of the uncovered holes:
    known pixels come from the noised splatted image at every step, with
    ``resample_steps`` jump-back repeats per step."""
    if resample_steps < 1:
        raise ValueError("resample_steps must be >= 1")
    warped, hit = grid.forward_splat(source, f_target, fill="zeros")
    hole = (1.0 - hit).unsqueeze(-1)
    gen = torch.Generator()
    gen.manual_seed(seed + 71)
    x = torch.randn(source.shape, generator=gen, dtype=source.dtype)
    for t in range(schedule.T, 0, -1):
        beta = schedule.beta(t)
        for u in range(1, resample_steps + 1):
            eps = epsilon_hat(x, t, dataset, schedule)
            x_prev = ddim_step(x, eps, t, t - 1, schedule)
            known_prev = noise_source(warped, t - 1, schedule, seed)
            x_prev = hole * x_prev + (1 - hole) * known_prev
            if u < resample_steps:
                noise = torch.randn(source.shape, generator=gen, dtype=source.dtype)
                x = math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * noise
            else:
                x = x_prev
    return x


def metric_flow(
    source: torch.Tensor,
    generated: torch.Tensor,
    f_target: torch.Tensor,
    edit_mask: torch.Tensor | None = None,
) -> dict:
    """Mean L1 between the held-out estimator's flow and the target flow,
    overall and inside the edit mask."""
    est = heldout_estimator(source, generated)
    err = (est - f_target).abs()
    overall = float(err.mean())
    if edit_mask is None:
        edit_mask = grid.edit_mask(f_target, dilation_radius=2)
    msum = float(edit_mask.sum())
    inside = float((err * edit_mask.unsqueeze(-1)).sum() / max(2 * msum, 1e-8))
    return {"overall": overall, "edit_region": inside}


def metric_appearance(
    source: torch.Tensor,
    generated: torch.Tensor,
    edit_mask: torch.Tensor,
    m_color: torch.Tensor,
    f_target: torch.Tensor,
) -> dict:
    """Pixel-space faithfulness surrogate: L1 to the source outside the edit
    region plus occlusion-masked L1 between source and the generated image
    pulled back by the target flow."""
    C = source.shape[-1]
    outside = (1.0 - edit_mask).unsqueeze(-1)
    out_l1 = float(((source - generated).abs() * outside).sum() / max(float(outside.sum()) * C, 1e-8))
    pulled = grid.backward_warp(generated, f_target)
    mc = m_color.unsqueeze(-1)
    in_l1 = float(((source - pulled).abs() * mc).sum() / max(float(mc.sum()) * C, 1e-8))
    return {"outside_edit": out_l1, "warped_inside": in_l1, "total": out_l1 + in_l1}


def nearest_neighbor(dataset: EmpiricalDataset, img: torch.Tensor) -> int:
    d = (dataset.images - img.unsqueeze(0)).flatten(1).norm(dim=1)
    return int(d.argmin())


def shape_centroid(img: torch.Tensor, background: torch.Tensor, thresh: float = 0.25) -> tuple[float, float]:
    """(row, col) centroid of pixels that differ from the background."""
    diff = (img - background).abs().sum(dim=-1)
    m = (diff > thresh).float()
    if m.sum() < 1:
        return (float("nan"), float("nan"))
    yy, xx = torch.meshgrid(
        torch.arange(m.shape[0], dtype=torch.float32),
        torch.arange(m.shape[1], dtype=torch.float32),
        indexing="ij",
    )
    return (float((yy * m).sum() / m.sum()), float((xx * m).sum() / m.sum()))


def run_guided_case(
    case: BenchmarkCase,
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
) -> tuple[torch.Tensor, list, object]:
    """Sample candidates for one case and return (best image, ranking, trace)."""
    source = dataset.images[case.source_index]
    imgs, trace = guided_sample(source, case.flow, dataset, schedule, cfg)
    finals = trace.final_losses()
    ranked = rerank([(imgs[i], finals[i], trace.diverged[i]) for i in range(imgs.shape[0])])
    return imgs[ranked[0]], ranked, trace


def motion_transfer(
    frame1: torch.Tensor,
    frame2: torch.Tensor,
    source: torch.Tensor,
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
) -> tuple[torch.Tensor, torch.Tensor, object]:
    """Extract flow from a frame pair and use it, unmasked, as the target for
    a different source image (reduced-K configs recommended)."""
    if frame1.shape[:2] != source.shape[:2]:
        raise ValueError("frames and source must share extent")
    with torch.no_grad():
        f_target = estimate_flow(frame1, frame2, cfg.estimator)
    cfg_t = dataclasses.replace(cfg, use_edit_mask=False)
    imgs, trace = guided_sample(source, f_target, dataset, schedule, cfg_t)
    finals = trace.final_losses()
    ranked = rerank([(imgs[i], finals[i], trace.diverged[i]) for i in range(imgs.shape[0])])
    return f_target, imgs[ranked[0]], trace


def flow_scale_sequence(
    source: torch.Tensor,
    f_target: torch.Tensor,
    factors: list[float],
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
) -> list[torch.Tensor]:
    """Independent guided samples for each scaled target flow, in order."""
    frames = []
    for f in factors:
        imgs, trace = guided_sample(source, f_target * f, dataset, schedule, cfg)
        finals = trace.final_losses()
        ranked = rerank([(imgs[i], finals[i], trace.diverged[i]) for i in range(imgs.shape[0])])
        frames.append(imgs[ranked[0]])
    return frames


ABLATION_VARIANTS = ("full", "no_recursive", "no_color", "no_flow", "no_occlusion", "no_guidance")


def ablation_config(cfg: GuidanceConfig, variant: str) -> GuidanceConfig:
    if variant == "full":
        return cfg
    if variant == "no_recursive":
        return dataclasses.replace(cfg, recursion_steps=1)
    if variant == "no_color":
        return dataclasses.replace(cfg, lambda_color=0.0)
    if variant == "no_flow":
        # knowledge of the target enters through the color term instead
        return dataclasses.replace(cfg, lambda_flow=0.0, color_flow="target")
    if variant == "no_occlusion":
        return dataclasses.replace(cfg, use_occlusion_mask=False)
    if variant == "no_guidance":
        return dataclasses.replace(cfg, global_scale=0.0)
    raise ValueError(f"unknown ablation variant {variant!r}")


def evaluate_case_output(
    case: BenchmarkCase,
    dataset: EmpiricalDataset,
    generated: torch.Tensor,
    cfg: GuidanceConfig,
) -> dict:
    source = dataset.images[case.source_index]
    m = grid.edit_mask(case.flow, cfg.moving_threshold, cfg.edit_dilation)
    mc = grid.occlusion_mask(case.flow, cfg.moving_threshold)
    mf = metric_flow(source, generated, case.flow, m)
    ma = metric_appearance(source, generated, m, mc, case.flow)
    nn = nearest_neighbor(dataset, generated)
    return {
        "flow_metric": mf,
        "appearance_metric": ma,
        "nearest_neighbor": nn,
        "nearest_position": dataset.metadata[nn].get("position") if dataset.metadata else None,
        "target_position": dataset.metadata[case.target_index].get("position")
        if dataset.metadata
        else None,
    }
