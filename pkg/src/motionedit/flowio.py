"""Middlebury .flo file I/O and color-wheel flow visualization."""

from __future__ import annotations

import struct

import numpy as np
import torch

FLO_MAGIC = 202021.25


def write_flo(path, flow: torch.Tensor) -> None:
    """Write an (H, W, 2) flow as little-endian Middlebury .flo.

    Layout: float32 magic, int32 width, int32 height, row-major interleaved
    (u, v) float32 pairs. Round-trips bit-exactly.
    """
    arr = flow.detach().cpu().numpy().astype("<f4")
    H, W = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", W, H))
        fh.write(arr.tobytes())


def read_flo(path) -> torch.Tensor:
    with open(path, "rb") as fh:
        magic = struct.unpack("<f", fh.read(4))[0]
        if abs(magic - FLO_MAGIC) > 1e-3:
            raise ValueError(f"{path}: bad .flo magic {magic}")
        W, H = struct.unpack("<ii", fh.read(8))
        data = np.frombuffer(fh.read(H * W * 2 * 4), dtype="<f4")
    if data.size != H * W * 2:
        raise ValueError(f"{path}: truncated .flo payload")
    return torch.from_numpy(data.reshape(H, W, 2).copy())


def _make_colorwheel() -> np.ndarray:
    """Standard 55-entry Middlebury color wheel (RY, YG, GC, CB, BM, MR arcs)."""
    RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((RY + YG + GC + CB + BM + MR, 3))
    col = 0
    wheel[0:RY, 0] = 255
    wheel[0:RY, 1] = np.floor(255 * np.arange(RY) / RY)
    col += RY
    wheel[col : col + YG, 0] = 255 - np.floor(255 * np.arange(YG) / YG)
    wheel[col : col + YG, 1] = 255
    col += YG
    wheel[col : col + GC, 1] = 255
    wheel[col : col + GC, 2] = np.floor(255 * np.arange(GC) / GC)
    col += GC
    wheel[col : col + CB, 1] = 255 - np.floor(255 * np.arange(CB) / CB)
    wheel[col : col + CB, 2] = 255
    col += CB
    wheel[col : col + BM, 2] = 255
    wheel[col : col + BM, 0] = np.floor(255 * np.arange(BM) / BM)
    col += BM
    wheel[col : col + MR, 2] = 255 - np.floor(255 * np.arange(MR) / MR)
    wheel[col : col + MR, 0] = 255
    return wheel / 255.0


_COLORWHEEL = _make_colorwheel()


def visualize_flow(flow: torch.Tensor, max_magnitude: float | None = None) -> torch.Tensor:
    """Render a flow field as an RGB image in diffusion range.

    Hue encodes direction per the Middlebury wheel, saturation encodes
    magnitude; zero flow renders white. ``max_magnitude=None`` normalizes by
    the field's own maximum.
    """
    f = flow.detach().cpu().numpy().astype(np.float64)
    u, v = f[..., 0], f[..., 1]
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = max(mag.max(), 1e-9)
    rad = np.clip(mag / max_magnitude, 0.0, 1.0)

    ncols = _COLORWHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi  # [-1, 1]
    fk = (angle + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int) % ncols
    k1 = (k0 + 1) % ncols
    t = fk - np.floor(fk)
    col = (1 - t[..., None]) * _COLORWHEEL[k0] + t[..., None] * _COLORWHEEL[k1]
    rgb = 1.0 - rad[..., None] * (1.0 - col)  # desaturate toward white
    return torch.from_numpy((rgb * 2.0 - 1.0).astype(np.float32))
