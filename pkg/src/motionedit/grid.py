"""Dense grid primitives: bilinear sampling, warping, splatting, and motion masks.

Conventions used throughout the package:

* images are ``(H, W, C)`` float tensors, C in {1, 3}, diffusion range [-1, 1]
* flow fields are ``(H, W, 2)`` float tensors, last dim ``(u, v)`` where ``u``
  is horizontal (column) displacement and ``v`` vertical (row) displacement
* masks are ``(H, W)`` float tensors with values in [0, 1]

A flow "from A to B" means content of B appears at ``p + f(p)``: backward
warping B by ``f`` reconstructs A where the motion is valid.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

MOVING_THRESHOLD = 0.5  # px; flows below this count as static


def _check_extent(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"{what}: extent mismatch {tuple(a.shape[:2])} vs {tuple(b.shape[:2])}")


def to_display(img: torch.Tensor) -> torch.Tensor:
    """Map diffusion range [-1, 1] to display range [0, 1]."""
    return (img + 1.0) / 2.0


def from_display(img: torch.Tensor) -> torch.Tensor:
    """Map display range [0, 1] to diffusion range [-1, 1]."""
    return img * 2.0 - 1.0


def bilinear_sample(img: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample ``img`` at real-valued ``coords``.

    ``coords[..., 0]`` are rows and ``coords[..., 1]`` columns. Coordinates are
    clamped to the image rectangle before interpolation (border-clamp policy),
    so this is a total function on finite inputs. Differentiable in both
    ``img`` and ``coords``.
    """
    if img.dim() == 2:
        img = img.unsqueeze(-1)
    H, W, C = img.shape
    rows = coords[..., 0].clamp(0.0, float(H - 1))
    cols = coords[..., 1].clamp(0.0, float(W - 1))

    r0 = rows.detach().floor().long().clamp(0, max(H - 2, 0))
    c0 = cols.detach().floor().long().clamp(0, max(W - 2, 0))
    r1 = (r0 + 1).clamp(max=H - 1)
    c1 = (c0 + 1).clamp(max=W - 1)

    wr = (rows - r0.to(rows.dtype)).unsqueeze(-1)
    wc = (cols - c0.to(cols.dtype)).unsqueeze(-1)

    flat = img.reshape(H * W, C)
    v00 = flat[(r0 * W + c0).reshape(-1)].reshape(*r0.shape, C)
    v01 = flat[(r0 * W + c1).reshape(-1)].reshape(*r0.shape, C)
    v10 = flat[(r1 * W + c0).reshape(-1)].reshape(*r0.shape, C)
    v11 = flat[(r1 * W + c1).reshape(-1)].reshape(*r0.shape, C)

    top = v00 * (1 - wc) + v01 * wc
    bot = v10 * (1 - wc) + v11 * wc
    return top * (1 - wr) + bot * wr


def base_grid(height: int, width: int, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 2) grid of (row, col) pixel coordinates."""
    rr, cc = torch.meshgrid(
        torch.arange(height, dtype=dtype),
        torch.arange(width, dtype=dtype),
        indexing="ij",
    )
    return torch.stack([rr, cc], dim=-1)


def backward_warp(img: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Pull ``img`` backward by ``flow``: out(p) = img(p + f(p)).

    Differentiable in both arguments. Zero flow reproduces ``img`` bit-exactly.
    """
    _check_extent(img, flow, "backward_warp")
    H, W = flow.shape[:2]
    grid = base_grid(H, W, dtype=flow.dtype)
    coords = torch.stack(
        [grid[..., 0] + flow[..., 1], grid[..., 1] + flow[..., 0]], dim=-1
    )
    squeeze = img.dim() == 2
    out = bilinear_sample(img, coords)
    return out.squeeze(-1) if squeeze else out


def forward_splat(
    img: torch.Tensor, flow: torch.Tensor, fill: str = "zeros"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Push each source pixel to ``round(p + f(p))``.

    Ties are resolved by the pixel with the larger flow magnitude winning (the
    target flow describes foreground motion); equal magnitudes fall back to
    the smaller row-major source index for determinism. Returns the splatted
    image and a hit mask of covered destinations. Holes are filled per
    ``fill`` in {"zeros", "nearest"} (nearest covered pixel). Not
    differentiable.
    """
    _check_extent(img, flow, "forward_splat")
    if fill not in ("zeros", "nearest"):
        raise ValueError(f"unknown fill policy {fill!r}")
    squeeze = img.dim() == 2
    arr = img.detach().cpu().numpy()
    if arr.ndim == 2:
        arr = arr[..., None]
    H, W, C = arr.shape
    f = flow.detach().cpu().numpy()

    rr, cc = np.mgrid[0:H, 0:W]
    dest_r = np.rint(rr + f[..., 1]).astype(np.int64).ravel()
    dest_c = np.rint(cc + f[..., 0]).astype(np.int64).ravel()
    inb = (dest_r >= 0) & (dest_r < H) & (dest_c >= 0) & (dest_c < W)
    src = np.flatnonzero(inb)
    mag = np.hypot(f[..., 0], f[..., 1]).ravel()[src]

    # write in ascending magnitude so the largest-magnitude source lands last;
    # among equal magnitudes the smallest source index must win, so it is
    # ordered last within its tie group
    order = np.lexsort((-src, mag))
    src = src[order]
    di = dest_r[src] * W + dest_c[src]

    out = np.zeros((H * W, C), dtype=arr.dtype)
    hit = np.zeros(H * W, dtype=bool)
    out[di] = arr.reshape(H * W, C)[src]
    hit[di] = True

    out = out.reshape(H, W, C)
    hit = hit.reshape(H, W)
    if fill == "nearest" and not hit.all() and hit.any():
        _, (ir, ic) = ndimage.distance_transform_edt(~hit, return_indices=True)
        out = out[ir, ic]

    out_t = torch.from_numpy(out).to(img.dtype)
    if squeeze:
        out_t = out_t.squeeze(-1)
    return out_t, torch.from_numpy(hit.astype(np.float32))


def _moving_and_dest(flow: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Moving set M = {p : |f(p)| > threshold} and destination set D covered by
    splatting a 3x3 footprint of each moving pixel at its rounded destination."""
    H, W = flow.shape[:2]
    mag = np.hypot(flow[..., 0], flow[..., 1])
    moving = mag > threshold
    dest = np.zeros((H, W), dtype=bool)
    rs, cs = np.nonzero(moving)
    if rs.size:
        dr = np.rint(rs + flow[rs, cs, 1]).astype(np.int64)
        dc = np.rint(cs + flow[rs, cs, 0]).astype(np.int64)
        for or_ in (-1, 0, 1):
            for oc in (-1, 0, 1):
                r = dr + or_
                c = dc + oc
                ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
                dest[r[ok], c[ok]] = True
    return moving, dest


def occlusion_mask(flow: torch.Tensor, threshold: float = MOVING_THRESHOLD) -> torch.Tensor:
    """Mask for the color loss: 0 on static pixels that moving content will
    overwrite (D minus M), 1 elsewhere."""
    f = flow.detach().cpu().numpy()
    moving, dest = _moving_and_dest(f, threshold)
    occluded = dest & ~moving
    return torch.from_numpy((~occluded).astype(np.float32))


def edit_mask(
    flow: torch.Tensor,
    threshold: float = MOVING_THRESHOLD,
    dilation_radius: int = 0,
) -> torch.Tensor:
    """Binary mask of every pixel content moves to or from (M union D),
    optionally dilated by an all-ones box of radius ``dilation_radius``."""
    if dilation_radius < 0:
        raise ValueError("dilation_radius must be >= 0")
    f = flow.detach().cpu().numpy()
    moving, dest = _moving_and_dest(f, threshold)
    mask = torch.from_numpy((moving | dest).astype(np.float32))
    return dilate_mask(mask, dilation_radius)


def dilate_mask(mask: torch.Tensor, radius: int) -> torch.Tensor:
    """Dilate a binary mask with a (2r+1)^2 all-ones convolution and a >0
    threshold (box-blur-then-threshold)."""
    if radius <= 0:
        return (mask > 0).to(mask.dtype)
    k = 2 * radius + 1
    kernel = torch.ones(1, 1, k, k, dtype=mask.dtype)
    x = mask.unsqueeze(0).unsqueeze(0)
    out = F.conv2d(F.pad(x, (radius,) * 4), kernel)
    return (out.squeeze(0).squeeze(0) > 0).to(mask.dtype)
