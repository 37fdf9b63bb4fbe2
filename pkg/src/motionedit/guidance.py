"""Motion-guided sampling: flow/color guidance losses, the guided noise
update with norm clipping, occlusion and edit mask integration, recursive
denoising, and candidate re-ranking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import torch

from . import grid
from .diffusion import EmpiricalDataset, NoiseSchedule, cached_source_trajectory, ddim_step, posterior_mean
from .estimator import EstimatorParams, estimate_flow_batched, to_luma, warp_batched


@dataclass(frozen=True)
class GuidanceConfig:
    lambda_flow: float = 3.0
    lambda_color: float = 100.0
    global_scale: float = 300.0
    clip_norm: float = 200.0
    recursion_steps: int = 10  # K repeats per guided denoising step
    guided_fraction: float = 0.8
    num_candidates: int = 8
    estimator: EstimatorParams = dc_field(default_factory=EstimatorParams)
    moving_threshold: float = 0.5
    edit_dilation: int = 2
    use_edit_mask: bool = True
    use_occlusion_mask: bool = True
    # which flow warps x in the color term; the estimated variant can anchor
    # the source mode early in the chain when the estimate is still near zero
    color_flow: str = "target"  # or "estimated"
    x0_clamp: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.lambda_flow < 0 or self.lambda_color < 0:
            raise ValueError("loss weights must be >= 0")
        if self.clip_norm <= 0 or self.recursion_steps < 1 or self.num_candidates < 1:
            raise ValueError("invalid guidance config")
        if not (0.0 < self.guided_fraction <= 1.0):
            raise ValueError("guided_fraction must be in (0, 1]")


@dataclass
class TraceEntry:
    t: int
    k: int
    flow_loss: list
    color_loss: list
    total_loss: list
    grad_norm: list
    grad_norm_clipped: list


@dataclass
class GuidanceTrace:
    entries: list = dc_field(default_factory=list)
    diverged: list = dc_field(default_factory=list)  # per-candidate flag

    def final_losses(self) -> list:
        if not self.entries:
            return []
        return self.entries[-1].total_loss

    def to_records(self) -> list[dict]:
        return [
            {
                "t": e.t,
                "k": e.k,
                "flow_loss": e.flow_loss,
                "color_loss": e.color_loss,
                "total_loss": e.total_loss,
                "grad_norm": e.grad_norm,
                "grad_norm_clipped": e.grad_norm_clipped,
            }
            for e in self.entries
        ]


def losses_batched(
    x_star: torch.Tensor,
    x: torch.Tensor,
    f_target: torch.Tensor,
    m_color: torch.Tensor,
    params: EstimatorParams,
    color_flow: str = "estimated",
    need_flow_loss: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-candidate (flow, color) guidance losses for a (B, H, W, C) batch.

    One flow estimate feeds both terms; gradients flow through the estimate in
    both (including through the backward warp's sampling coordinates). With
    ``color_flow="target"`` the color warp uses the target flow instead; if
    additionally the flow loss is unused, the estimator is skipped entirely.
    """
    B, H, W, C = x.shape
    target = f_target.permute(2, 0, 1).unsqueeze(0).to(x.dtype)
    if need_flow_loss or color_flow == "estimated":
        g1 = to_luma(x_star).reshape(1, 1, H, W).expand(B, 1, H, W)
        g2 = to_luma(x).unsqueeze(1)
        flow = estimate_flow_batched(g1, g2, params)  # (B, 2, H, W)
        flow_l = (flow - target).abs().mean(dim=(1, 2, 3))
    else:
        flow = None
        flow_l = torch.zeros(B, dtype=x.dtype)

    warp_flow = flow if color_flow == "estimated" else target.expand(B, 2, H, W)
    warped = warp_batched(x.permute(0, 3, 1, 2), warp_flow)  # (B, C, H, W)
    src = x_star.permute(2, 0, 1).unsqueeze(0)
    diff = (src - warped).abs() * m_color.reshape(1, 1, H, W)
    denom = m_color.sum() * C
    color_l = diff.sum(dim=(1, 2, 3)) / denom.clamp_min(1e-8)
    return flow_l, color_l


def flow_loss(
    x_star: torch.Tensor,
    x: torch.Tensor,
    f_target: torch.Tensor,
    params: EstimatorParams | None = None,
) -> torch.Tensor:
    """Mean L1 between the estimated flow F(x_star, x) and the target flow."""
    grid._check_extent(x_star, x, "flow_loss")
    ones = torch.ones(x.shape[:2], dtype=x.dtype)
    fl, _ = losses_batched(x_star, x.unsqueeze(0), f_target, ones, params or EstimatorParams())
    return fl[0]


def color_loss(
    x_star: torch.Tensor,
    x: torch.Tensor,
    m_color: torch.Tensor,
    params: EstimatorParams | None = None,
) -> torch.Tensor:
    """Occlusion-masked mean L1 between x_star and x pulled back by the
    estimated flow."""
    grid._check_extent(x_star, x, "color_loss")
    zero_f = torch.zeros(*x.shape[:2], 2, dtype=x.dtype)
    _, cl = losses_batched(x_star, x.unsqueeze(0), zero_f, m_color, params or EstimatorParams())
    return cl[0]


def total_loss(
    x_star: torch.Tensor,
    x: torch.Tensor,
    f_target: torch.Tensor,
    m_color: torch.Tensor,
    cfg: GuidanceConfig,
) -> torch.Tensor:
    """lambda_flow * L_flow + lambda_color * masked L_color (one flow pass)."""
    fl, cl = losses_batched(x_star, x.unsqueeze(0), f_target, m_color, cfg.estimator)
    return cfg.lambda_flow * fl[0] + cfg.lambda_color * cl[0]


def one_step_x0(
    x_t: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    dataset: EmpiricalDataset,
    clamp: float = 1.5,
) -> torch.Tensor:
    """One-step clean approximation (x_t - sqrt(1-ab) eps_hat)/sqrt(ab),
    clamped before it enters the loss; for the exact denoiser this equals the
    posterior mean."""
    return posterior_mean(x_t, t, dataset, schedule).clamp(-clamp, clamp)


def _clip_by_norm(g: torch.Tensor, c: float) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    norms = g.flatten(1).norm(dim=1)
    factor = torch.where(norms > c, c / norms.clamp_min(1e-12), torch.ones_like(norms))
    clipped = g * factor.reshape(-1, 1, 1, 1)
    return clipped, norms, norms.clamp(max=c)


def guided_epsilon_batched(
    x_t: torch.Tensor,
    t: int,
    k: int,
    x_star: torch.Tensor,
    f_target: torch.Tensor,
    m_color: torch.Tensor,
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    scale: float,
) -> tuple[torch.Tensor, TraceEntry]:
    """Noise estimate augmented with the clipped loss gradient for a batch of
    candidates: eps_tilde = eps_hat + scale * clip(grad)."""
    ab = schedule.alpha_bar[t].to(x_t.dtype)
    if scale == 0.0:
        with torch.no_grad():
            x0 = posterior_mean(x_t, t, dataset, schedule)
            eps = (x_t - torch.sqrt(ab) * x0) / torch.sqrt(1.0 - ab)
            fl, cl = losses_batched(
                x_star,
                x0.clamp(-cfg.x0_clamp, cfg.x0_clamp),
                f_target,
                m_color,
                cfg.estimator,
                cfg.color_flow,
                cfg.lambda_flow > 0,
            )
            tot = cfg.lambda_flow * fl + cfg.lambda_color * cl
        B = x_t.shape[0]
        zeros = [0.0] * B
        return eps, TraceEntry(t, k, fl.tolist(), cl.tolist(), tot.tolist(), zeros, zeros)

    x_req = x_t.detach().requires_grad_(True)
    x0 = posterior_mean(x_req, t, dataset, schedule)
    x0c = x0.clamp(-cfg.x0_clamp, cfg.x0_clamp)
    fl, cl = losses_batched(
        x_star, x0c, f_target, m_color, cfg.estimator, cfg.color_flow, cfg.lambda_flow > 0
    )
    tot = cfg.lambda_flow * fl + cfg.lambda_color * cl
    tot.sum().backward()
    g = x_req.grad
    g = torch.where(torch.isfinite(g), g, torch.zeros_like(g))
    g, norms, norms_c = _clip_by_norm(g, cfg.clip_norm)

    with torch.no_grad():
        eps = (x_t - torch.sqrt(ab) * x0.detach()) / torch.sqrt(1.0 - ab)
        eps_tilde = eps + scale * g
    entry = TraceEntry(
        t,
        k,
        fl.detach().tolist(),
        cl.detach().tolist(),
        tot.detach().tolist(),
        norms.detach().tolist(),
        norms_c.detach().tolist(),
    )
    return eps_tilde, entry


def config_from_dict(doc: dict) -> GuidanceConfig:
    """Build a GuidanceConfig from its JSON document form, rejecting unknown
    fields (see docs/schemas.md); ``estimator`` may be a nested document."""
    import dataclasses

    doc = dict(doc)
    est_doc = doc.pop("estimator", None)
    known = {f.name for f in dataclasses.fields(GuidanceConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    kwargs = dict(doc)
    if est_doc is not None:
        est_known = {f.name for f in dataclasses.fields(EstimatorParams)}
        est_unknown = set(est_doc) - est_known
        if est_unknown:
            raise ValueError(f"unknown estimator fields: {sorted(est_unknown)}")
        kwargs["estimator"] = EstimatorParams(**est_doc)
    return GuidanceConfig(**kwargs)


def config_to_dict(cfg: GuidanceConfig) -> dict:
    import dataclasses

    doc = dataclasses.asdict(cfg)
    doc["estimator"] = dataclasses.asdict(cfg.estimator)
    return doc


def guided_sample(
    x_star: torch.Tensor,
    f_target: torch.Tensor,
    dataset: EmpiricalDataset,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    num_candidates: int | None = None,
    progress_cb=None,
    cancel=None,
    source_trajectory: list[torch.Tensor] | None = None,
) -> tuple[torch.Tensor, GuidanceTrace]:
    """Run the full guided DDIM chain for a batch of candidates.

    Returns a (B, H, W, C) stack of final images (diffusion range) and the
    per-(t, k) trace. Pixels outside the edit mask are copied from the cached
    noised-source trajectory at every step, so the final image equals x_star
    there. Candidates whose loss goes non-finite are flagged diverged.
    """
    B = num_candidates if num_candidates is not None else cfg.num_candidates
    H, W, C = x_star.shape
    T = schedule.T
    grid._check_extent(x_star, f_target, "guided_sample")

    if cfg.use_edit_mask:
        m = grid.edit_mask(f_target, cfg.moving_threshold, cfg.edit_dilation)
    else:
        m = torch.ones(H, W)
    if cfg.use_occlusion_mask:
        m_color = grid.occlusion_mask(f_target, cfg.moving_threshold)
    else:
        m_color = torch.ones(H, W)
    m_b = m.reshape(1, H, W, 1).to(x_star.dtype)

    if source_trajectory is None:
        source_trajectory = cached_source_trajectory(x_star, schedule, cfg.seed)

    gen = torch.Generator()
    gen.manual_seed(cfg.seed)
    x = torch.randn(B, H, W, C, generator=gen, dtype=x_star.dtype)
    x = m_b * x + (1 - m_b) * source_trajectory[T].unsqueeze(0)

    guidance_cutoff = T - math.ceil(cfg.guided_fraction * T)  # guided for t > cutoff
    trace = GuidanceTrace(diverged=[False] * B)
    total_steps = T

    for t in range(T, 0, -1):
        if cancel is not None and cancel.is_set():
            raise RuntimeError("cancelled")
        guided = t > guidance_cutoff and cfg.global_scale != 0.0
        repeats = cfg.recursion_steps if guided else 1
        scale = cfg.global_scale if guided else 0.0
        beta = schedule.beta(t)
        for k in range(1, repeats + 1):
            eps_tilde, entry = guided_epsilon_batched(
                x, t, k, x_star, f_target, m_color, dataset, schedule, cfg, scale
            )
            bad = [not math.isfinite(v) for v in entry.total_loss]
            trace.diverged = [d or b for d, b in zip(trace.diverged, bad)]
            trace.entries.append(entry)
            x_prev = ddim_step(x, eps_tilde, t, t - 1, schedule)
            if k < repeats:
                noise = torch.randn(B, H, W, C, generator=gen, dtype=x_star.dtype)
                x = math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * noise
            else:
                x = x_prev
        x = m_b * x + (1 - m_b) * source_trajectory[t - 1].unsqueeze(0)
        if progress_cb is not None:
            progress_cb(T - t + 1, total_steps, trace)
    return x, trace


def rerank(candidates: list[tuple[torch.Tensor, float, bool]]) -> list[int]:
    """Order candidate indices by ascending final total loss; non-finite or
    diverged candidates rank last."""
    if not candidates:
        raise ValueError("need at least one candidate")

    def key(i):
        _, loss, diverged = candidates[i]
        bad = diverged or not math.isfinite(loss)
        return (1 if bad else 0, loss if math.isfinite(loss) else float("inf"), i)

    return sorted(range(len(candidates)), key=key)
