"""Target-flow construction: elementary motion primitives, homography fitting,
sine-interpolated deformations, and masked composition from a JSON spec."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .grid import dilate_mask
from .images import load_mask_png

Extent = tuple[int, int]  # (H, W)


def _xy_grid(extent: Extent) -> tuple[np.ndarray, np.ndarray]:
    H, W = extent
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    return xx, yy


def _field(u: np.ndarray, v: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.stack([u, v], axis=-1).astype(np.float32))


def synth_translation(extent: Extent, d: tuple[float, float]) -> torch.Tensor:
    """Constant displacement d = (u, v) everywhere."""
    H, W = extent
    u = np.full((H, W), float(d[0]))
    v = np.full((H, W), float(d[1]))
    return _field(u, v)


def synth_rotation(extent: Extent, center: tuple[float, float], angle_deg: float) -> torch.Tensor:
    """Rotation about ``center`` (x, y) by ``angle_deg``: f(p) = R(p-c) - (p-c)."""
    xx, yy = _xy_grid(extent)
    dx, dy = xx - center[0], yy - center[1]
    th = math.radians(angle_deg)
    cos_t, sin_t = math.cos(th), math.sin(th)
    return _field(cos_t * dx - sin_t * dy - dx, sin_t * dx + cos_t * dy - dy)


def synth_scale(extent: Extent, center: tuple[float, float], factor: float) -> torch.Tensor:
    """Uniform scaling about ``center``: f(p) = (s - 1)(p - c)."""
    if factor <= 0:
        raise ValueError("scale factor must be > 0")
    xx, yy = _xy_grid(extent)
    return _field((factor - 1.0) * (xx - center[0]), (factor - 1.0) * (yy - center[1]))


def synth_stretch(
    extent: Extent, center: tuple[float, float], axis_deg: float, factor: float
) -> torch.Tensor:
    """1-D scaling by ``factor`` along the axis at ``axis_deg``; identity on the
    perpendicular axis."""
    if factor <= 0:
        raise ValueError("stretch factor must be > 0")
    xx, yy = _xy_grid(extent)
    phi = math.radians(axis_deg)
    ax, ay = math.cos(phi), math.sin(phi)
    proj = (xx - center[0]) * ax + (yy - center[1]) * ay
    return _field((factor - 1.0) * proj * ax, (factor - 1.0) * proj * ay)


def synth_shear(
    extent: Extent, center: tuple[float, float], kx: float = 0.0, ky: float = 0.0
) -> torch.Tensor:
    """Shear about ``center`` with matrix [[1, kx], [ky, 1]]."""
    xx, yy = _xy_grid(extent)
    dx, dy = xx - center[0], yy - center[1]
    return _field(kx * dy, ky * dx)


def fit_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Fit a 3x3 homography mapping src -> dst points (each (N, 2), x/y order)
    with the normalized direct linear transform."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape[0] < 4:
        raise ValueError("homography needs at least 4 correspondences")

    def normalize(pts):
        mean = pts.mean(axis=0)
        d = np.linalg.norm(pts - mean, axis=1).mean()
        if d < 1e-12:
            raise ValueError("degenerate correspondence configuration")
        s = math.sqrt(2.0) / d
        T = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1]])
        homog = np.hstack([pts, np.ones((pts.shape[0], 1))])
        return (T @ homog.T).T, T

    sn, Ts = normalize(src)
    dn, Td = normalize(dst)
    rows = []
    for (x, y, _), (xp, yp, _) in zip(sn, dn):
        rows.append([-x, -y, -1, 0, 0, 0, xp * x, xp * y, xp])
        rows.append([0, 0, 0, -x, -y, -1, yp * x, yp * y, yp])
    A = np.array(rows)
    _, s, vt = np.linalg.svd(A)
    if s[-2] < 1e-10 * s[0]:
        raise ValueError("degenerate correspondence configuration")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return H / H[2, 2]


def synth_homography(extent: Extent, src_pts, dst_pts) -> torch.Tensor:
    """Flow of the homography fitted to point pairs: f(p) = project(H p) - p."""
    H = fit_homography(np.asarray(src_pts), np.asarray(dst_pts))
    xx, yy = _xy_grid(extent)
    w = H[2, 0] * xx + H[2, 1] * yy + H[2, 2]
    px = (H[0, 0] * xx + H[0, 1] * yy + H[0, 2]) / w
    py = (H[1, 0] * xx + H[1, 1] * yy + H[1, 2]) / w
    return _field(px - xx, py - yy)


def synth_interpolated(extent: Extent, controls) -> torch.Tensor:
    """Sine-smoothed interpolation of control displacements.

    ``controls`` is a list of ((x, y), (u, v)) pairs. Pixels are parameterized
    by their projection onto the controls' principal axis; between neighboring
    controls the displacement blends with a (1 - cos(pi t)) / 2 weight, and is
    held constant beyond the outermost controls.
    """
    if not controls:
        raise ValueError("need at least one control arrow")
    pos = np.array([c[0] for c in controls], dtype=np.float64)
    disp = np.array([c[1] for c in controls], dtype=np.float64)
    if len(controls) == 1:
        return synth_translation(extent, tuple(disp[0]))

    centered = pos - pos.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    t_ctrl = centered @ axis
    if np.ptp(t_ctrl) < 1e-9:
        return synth_translation(extent, tuple(disp.mean(axis=0)))
    order = np.argsort(t_ctrl)
    t_ctrl, disp = t_ctrl[order], disp[order]

    xx, yy = _xy_grid(extent)
    t = (xx - pos.mean(axis=0)[0]) * axis[0] + (yy - pos.mean(axis=0)[1]) * axis[1]
    t = np.clip(t, t_ctrl[0], t_ctrl[-1])
    idx = np.clip(np.searchsorted(t_ctrl, t, side="right") - 1, 0, len(t_ctrl) - 2)
    t0, t1 = t_ctrl[idx], t_ctrl[idx + 1]
    s = np.where(t1 > t0, (t - t0) / np.maximum(t1 - t0, 1e-12), 0.0)
    w = (1.0 - np.cos(np.pi * s)) / 2.0
    out = (1 - w[..., None]) * disp[idx] + w[..., None] * disp[idx + 1]
    return _field(out[..., 0], out[..., 1])


SYNTH_BY_KIND = {
    "translation": lambda extent, p: synth_translation(extent, p["d"]),
    "rotation": lambda extent, p: synth_rotation(extent, p["center"], p["angle_deg"]),
    "scale": lambda extent, p: synth_scale(extent, p["center"], p["factor"]),
    "stretch": lambda extent, p: synth_stretch(
        extent, p["center"], p["axis_deg"], p["factor"]
    ),
    "shear": lambda extent, p: synth_shear(
        extent, p["center"], p.get("kx", 0.0), p.get("ky", 0.0)
    ),
    "homography": lambda extent, p: synth_homography(extent, p["src"], p["dst"]),
    "interpolated": lambda extent, p: synth_interpolated(
        extent, [(c["pos"], c["d"]) for c in p["controls"]]
    ),
}


@dataclass
class FlowSpec:
    """Ordered masked primitives composited onto one canvas.

    Each pair is (kind, params, mask) where mask is an (H, W) tensor or None
    for the full canvas. Later pairs overwrite earlier ones where their
    dilated masks overlap; flow outside every dilated mask is zero.
    """

    extent: Extent
    pairs: list = field(default_factory=list)
    dilation_radius: int = 2

    def add(self, kind: str, params: dict, mask: torch.Tensor | None = None) -> "FlowSpec":
        if kind not in SYNTH_BY_KIND:
            raise ValueError(f"unknown primitive kind {kind!r}")
        if mask is not None and tuple(mask.shape) != tuple(self.extent):
            raise ValueError("mask extent does not match canvas")
        self.pairs.append((kind, params, mask))
        return self


def apply_spec(spec: FlowSpec) -> torch.Tensor:
    H, W = spec.extent
    out = torch.zeros(H, W, 2)
    for kind, params, mask in spec.pairs:
        f = SYNTH_BY_KIND[kind](spec.extent, params)
        if mask is None:
            m = torch.ones(H, W)
        else:
            m = dilate_mask((mask > 0.5).float(), spec.dilation_radius)
        out = torch.where(m.unsqueeze(-1) > 0, f, out)
    return out


def _mask_from_entry(entry: dict, extent: Extent, base_dir: Path) -> torch.Tensor | None:
    if entry.get("mask") is not None:
        return load_mask_png(base_dir / entry["mask"])
    if entry.get("mask_rect") is not None:
        r0, c0, r1, c1 = entry["mask_rect"]
        m = torch.zeros(extent)
        m[r0:r1, c0:c1] = 1.0
        return m
    return None


def spec_from_dict(doc: dict, base_dir: Path | str = ".") -> FlowSpec:
    """Build a FlowSpec from its JSON document form (see docs/flowspec.md)."""
    extent = (int(doc["extent"][0]), int(doc["extent"][1]))
    spec = FlowSpec(extent=extent, dilation_radius=int(doc.get("dilation_radius", 2)))
    base = Path(base_dir)
    for entry in doc.get("primitives", []):
        spec.add(entry["kind"], entry["params"], _mask_from_entry(entry, extent, base))
    return spec


def load_spec(path) -> FlowSpec:
    path = Path(path)
    with open(path) as fh:
        return spec_from_dict(json.load(fh), base_dir=path.parent)
