"""8-bit PNG image I/O mapped to the diffusion value range."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image as PILImage

from .grid import from_display, to_display


def load_png(path) -> torch.Tensor:
    """Load an 8-bit PNG as an (H, W, C) tensor in diffusion range [-1, 1].

    RGB stays 3-channel, grayscale becomes 1-channel; sRGB bytes map linearly
    onto [0, 1] display range.
    """
    pil = PILImage.open(path)
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB" if pil.mode not in ("1", "I;16", "I") else "L")
    arr = np.asarray(pil, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return from_display(torch.from_numpy(arr))


def save_png(path, img: torch.Tensor) -> None:
    """Save an (H, W, C) diffusion-range tensor as an 8-bit PNG."""
    disp = to_display(img.detach()).clamp(0.0, 1.0)
    arr = (disp.cpu().numpy() * 255.0).round().astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    PILImage.fromarray(arr).save(path)


def save_mask_png(path, mask: torch.Tensor) -> None:
    arr = (mask.detach().clamp(0, 1).cpu().numpy() * 255.0).round().astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def load_mask_png(path) -> torch.Tensor:
    pil = PILImage.open(path).convert("L")
    arr = np.asarray(pil, dtype=np.float32) / 255.0
    return torch.from_numpy(arr)
