import numpy as np
import torch
from scipy import ndimage


def smooth_texture(seed: int, H: int = 64, W: int = 64, sigma: float = 2.0) -> torch.Tensor:
    """Periodic smooth random texture in diffusion range, single channel."""
    rng = np.random.default_rng(seed)
    t = ndimage.gaussian_filter(rng.standard_normal((H, W)), sigma, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min()) * 2.0 - 1.0
    return torch.from_numpy(t.astype(np.float32))


def shifted_pair(seed: int, d: tuple[int, int], H: int = 64, W: int = 64, sigma: float = 2.0):
    """(I1, I2) with true flow = constant d: I2 holds I1's content displaced by
    d (periodic), so backward-warping I2 by d recovers I1."""
    I1 = smooth_texture(seed, H, W, sigma)
    I2 = torch.roll(I1, shifts=(d[1], d[0]), dims=(0, 1))
    return I1, I2
