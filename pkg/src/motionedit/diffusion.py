"""Diffusion prior over a finite image collection: noise schedule, exact
closed-form denoiser (softmax-weighted dataset average), DDIM stepping, and
deterministic source noising."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .images import load_png


@dataclass(frozen=True)
class NoiseSchedule:
    """Timestep table: ``alpha_bar[t]`` for t = 0..T with alpha_bar[0] = 1,
    and the effective per-step variance ``beta[t-1]`` for step t."""

    T: int
    alpha_bar: torch.Tensor  # (T + 1,)
    betas: torch.Tensor  # (T,)

    def __post_init__(self):
        ab = self.alpha_bar
        if not (ab[0] > 1.0 - 1e-3):
            raise ValueError("alpha_bar[0] must be ~1")
        if not (ab[1:] < ab[:-1]).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        if not ((self.betas > 0).all() and (self.betas < 1).all()):
            raise ValueError("betas must lie in (0, 1)")

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])


def make_schedule(num_steps: int = 100) -> NoiseSchedule:
    """Respaced linear schedule: the standard 1000-step linear beta ramp
    (1e-4 to 0.02) subsampled to ``num_steps`` with effective betas derived
    from the cumulative products."""
    base = torch.linspace(1e-4, 0.02, 1000, dtype=torch.float64)
    abar_full = torch.cumprod(1.0 - base, dim=0)
    idx = torch.linspace(0, 999, num_steps).round().long()
    abar = torch.cat([torch.ones(1, dtype=torch.float64), abar_full[idx]])
    betas = 1.0 - abar[1:] / abar[:-1]
    return NoiseSchedule(T=num_steps, alpha_bar=abar.float(), betas=betas.float())


@dataclass
class EmpiricalDataset:
    """The prior's support: a stack of same-extent images plus optional
    per-image metadata (e.g. shape position)."""

    images: torch.Tensor  # (N, H, W, C), diffusion range
    metadata: list = field(default_factory=list)

    def __post_init__(self):
        if self.images.dim() != 4 or self.images.shape[0] == 0:
            raise ValueError("dataset must be a nonempty (N, H, W, C) stack")

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def from_manifest(cls, path) -> "EmpiricalDataset":
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        imgs = torch.stack([load_png(path.parent / e["path"]) for e in doc["images"]])
        meta = [e.get("metadata", {}) for e in doc["images"]]
        return cls(images=imgs, metadata=meta)


def _flat(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(x.shape[0], -1)


def posterior_mean(
    x_t: torch.Tensor, t: int, dataset: EmpiricalDataset, schedule: NoiseSchedule
) -> torch.Tensor:
    """MMSE clean-image estimate under the empirical prior.

    Weights w_i proportional to exp(-|x_t - sqrt(ab_t) x_i|^2 / (2 (1 - ab_t)))
    via log-sum-exp; returns sum w_i x_i. ``x_t`` may carry a leading batch
    dim. Differentiable in x_t.
    """
    if not (1 <= t <= schedule.T):
        raise ValueError(f"timestep {t} outside [1, {schedule.T}]")
    batched = x_t.dim() == 4
    xb = x_t if batched else x_t.unsqueeze(0)
    ab = schedule.alpha_bar[t].to(xb.dtype)
    data = _flat(dataset.images).to(xb.dtype)  # (N, D)
    diff = _flat(xb).unsqueeze(1) - torch.sqrt(ab) * data.unsqueeze(0)  # (B, N, D)
    logw = -(diff * diff).sum(dim=-1) / (2.0 * (1.0 - ab))
    w = torch.softmax(logw, dim=1)  # (B, N)
    x0 = (w.unsqueeze(-1) * data.unsqueeze(0)).sum(dim=1).reshape(xb.shape)
    return x0 if batched else x0[0]


def epsilon_hat(
    x_t: torch.Tensor, t: int, dataset: EmpiricalDataset, schedule: NoiseSchedule
) -> torch.Tensor:
    """Exact noise estimate implied by the empirical MMSE denoiser."""
    ab = schedule.alpha_bar[t].to(x_t.dtype)
    x0 = posterior_mean(x_t, t, dataset, schedule)
    return (x_t - torch.sqrt(ab) * x0) / torch.sqrt(1.0 - ab)


def ddim_step(
    x_t: torch.Tensor, eps: torch.Tensor, t: int, t_prev: int, schedule: NoiseSchedule
) -> torch.Tensor:
    """Deterministic DDIM update from step t to t_prev (< t)."""
    if not (0 <= t_prev < t <= schedule.T):
        raise ValueError(f"invalid step pair ({t}, {t_prev})")
    ab_t = schedule.alpha_bar[t].to(x_t.dtype)
    ab_p = schedule.alpha_bar[t_prev].to(x_t.dtype)
    x0 = (x_t - torch.sqrt(1.0 - ab_t) * eps) / torch.sqrt(ab_t)
    return torch.sqrt(ab_p) * x0 + torch.sqrt(1.0 - ab_p) * eps


def _derived_generator(seed: int, t: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed((seed * 1_000_003 + t) % (2**63 - 1))
    return g


def noise_source(
    x_star: torch.Tensor, t: int, schedule: NoiseSchedule, noise_seed: int
) -> torch.Tensor:
    """Noised source x*_t = sqrt(ab_t) x* + sqrt(1 - ab_t) eps.

    The noise draw is a pure function of (noise_seed, t), so repeated calls
    for the same job reuse one realization per timestep.
    """
    if not (0 <= t <= schedule.T):
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")
    if t == 0:
        return x_star.clone()
    ab = schedule.alpha_bar[t].to(x_star.dtype)
    eps = torch.randn(x_star.shape, generator=_derived_generator(noise_seed, t), dtype=x_star.dtype)
    return torch.sqrt(ab) * x_star + torch.sqrt(1.0 - ab) * eps


def cached_source_trajectory(
    x_star: torch.Tensor, schedule: NoiseSchedule, noise_seed: int
) -> list[torch.Tensor]:
    """The full {x*_t} sequence for one job, t = 0..T."""
    return [noise_source(x_star, t, schedule, noise_seed) for t in range(schedule.T + 1)]


def sample_unguided(
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    seed: int,
    x_T: torch.Tensor | None = None,
) -> torch.Tensor:
    """Plain DDIM chain from pure noise down to t = 0."""
    shape = dataset.images.shape[1:]
    if x_T is None:
        g = torch.Generator()
        g.manual_seed(seed)
        x_T = torch.randn(shape, generator=g, dtype=dataset.images.dtype)
    x = x_T
    for t in range(schedule.T, 0, -1):
        eps = epsilon_hat(x, t, dataset, schedule)
        x = ddim_step(x, eps, t, t - 1, schedule)
    return x


def ddim_inversion(
    x_star: torch.Tensor, dataset: EmpiricalDataset, schedule: NoiseSchedule
) -> list[torch.Tensor]:
    """Deterministic reverse-DDIM trajectory [x*_0, ..., x*_T] whose forward
    DDIM replay approximately reconstructs x_star."""
    traj = [x_star.clone()]
    x = x_star
    for t_next in range(1, schedule.T + 1):
        eps = epsilon_hat(x, max(t_next - 1, 1), dataset, schedule)
        ab_n = schedule.alpha_bar[t_next].to(x.dtype)
        ab_c = schedule.alpha_bar[t_next - 1].to(x.dtype)
        x0 = (x - torch.sqrt(1.0 - ab_c) * eps) / torch.sqrt(ab_c)
        x = torch.sqrt(ab_n) * x0 + torch.sqrt(1.0 - ab_n) * eps
        traj.append(x)
    return traj
