import dataclasses

import pytest
import torch

from motionedit import grid
from motionedit.diffusion import EmpiricalDataset, make_schedule
from motionedit.estimator import EstimatorParams
from motionedit.guidance import (
    GuidanceConfig,
    color_loss,
    flow_loss,
    guided_sample,
    one_step_x0,
    rerank,
    total_loss,
)

from conftest import shifted_pair, smooth_texture


FAST_EST = EstimatorParams(pyramid_levels=2, iterations_per_level=8, warp_updates_per_level=1)


def rgb(x):
    return torch.stack([x, x, x], dim=-1)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ValueError):
        GuidanceConfig(lambda_flow=-1.0)
    with pytest.raises(ValueError):
        GuidanceConfig(clip_norm=0.0)
    with pytest.raises(ValueError):
        GuidanceConfig(recursion_steps=0)
    with pytest.raises(ValueError):
        GuidanceConfig(guided_fraction=0.0)
    with pytest.raises(ValueError):
        GuidanceConfig(guided_fraction=1.2)


# ---------------------------------------------------------------- losses


def test_flow_loss_zero_for_true_displacement():
    I1, I2 = shifted_pair(0, (2, 0))
    f_true = torch.zeros(64, 64, 2)
    f_true[..., 0] = 2.0
    l_true = flow_loss(rgb(I1), rgb(I2), f_true)
    l_wrong = flow_loss(rgb(I1), rgb(I2), -f_true)
    assert l_true < 0.6
    assert l_wrong > 2.0 * l_true


def test_color_loss_zero_on_identical_images():
    x = rgb(smooth_texture(1))
    m = torch.ones(64, 64)
    assert float(color_loss(x, x, m, FAST_EST)) < 1e-4


def test_color_loss_fully_masked_is_zero():
    x = rgb(smooth_texture(2))
    y = rgb(smooth_texture(3))
    m = torch.zeros(64, 64)
    assert float(color_loss(x, y, m, FAST_EST)) == pytest.approx(0.0, abs=1e-8)


def test_color_loss_catches_recoloring():
    # correct geometry, permuted channels: flow loss stays small, color
    # loss does not (the estimator only sees luma)
    I1 = smooth_texture(4)
    x = rgb(I1)
    # shift red against blue along a luma-neutral direction
    delta = 0.1 + 0.1 * smooth_texture(5).abs()
    recolored = x.clone()
    recolored[..., 0] += delta * 0.114
    recolored[..., 2] -= delta * 0.299
    f0 = torch.zeros(64, 64, 2)
    m = torch.ones(64, 64)
    assert float(flow_loss(x, recolored, f0, FAST_EST)) < 0.2
    assert float(color_loss(x, recolored, m, FAST_EST)) > 0.01


def test_total_loss_combines_with_configured_weights():
    I1, I2 = shifted_pair(5, (1, 0))
    x_star, x = rgb(I1), rgb(I2)
    f = torch.zeros(64, 64, 2)
    m = torch.ones(64, 64)
    cfg = GuidanceConfig(lambda_flow=3.0, lambda_color=100.0, estimator=FAST_EST)
    a = float(flow_loss(x_star, x, f, FAST_EST))
    b = float(color_loss(x_star, x, m, FAST_EST))
    tot = float(total_loss(x_star, x, f, m, cfg))
    assert tot == pytest.approx(3.0 * a + 100.0 * b, rel=1e-4)


def test_losses_differentiable_in_x():
    I1, I2 = shifted_pair(6, (1, 1), H=24, W=24)
    x = rgb(I2).requires_grad_(True)
    f = torch.ones(24, 24, 2)
    m = torch.ones(24, 24)
    cfg = GuidanceConfig(estimator=FAST_EST)
    total_loss(rgb(I1), x, f, m, cfg).backward()
    assert x.grad is not None
    assert torch.isfinite(x.grad).all()
    assert x.grad.abs().sum() > 0


# ---------------------------------------------------------------- x0 and rerank


def test_one_step_x0_clamped():
    imgs = torch.full((2, 8, 8, 3), 4.0)
    ds = EmpiricalDataset(images=imgs)
    s = make_schedule(50)
    x0 = one_step_x0(torch.randn(8, 8, 3), 25, s, ds, clamp=1.5)
    assert x0.abs().max() <= 1.5


def test_rerank_orders_by_loss_with_diverged_last():
    z = torch.zeros(1)
    cands = [(z, 0.5, False), (z, 0.1, False), (z, 0.01, True), (z, float("nan"), False)]
    order = rerank(cands)
    assert order[:2] == [1, 0]
    assert set(order[2:]) == {2, 3}


def test_rerank_empty_rejected():
    with pytest.raises(ValueError):
        rerank([])


# ---------------------------------------------------------------- sampling


def small_world():
    """Two-mode world on a 16x16 canvas: bright patch at left or right."""
    bg = rgb(smooth_texture(7, 16, 16)) * 0.3
    a = bg.clone()
    a[6:10, 2:6] = torch.tensor([0.8, -0.5, -0.5])
    b = bg.clone()
    b[6:10, 10:14] = torch.tensor([0.8, -0.5, -0.5])
    return EmpiricalDataset(images=torch.stack([a, b]), metadata=[{"position": [6, 2]}, {"position": [6, 10]}])


def patch_flow():
    f = torch.zeros(16, 16, 2)
    f[5:11, 1:7, 0] = 8.0
    return f


def fast_cfg(**kw):
    base = dict(
        estimator=FAST_EST,
        num_candidates=2,
        recursion_steps=2,
        seed=0,
    )
    base.update(kw)
    return GuidanceConfig(**base)


def test_guided_sample_shapes_and_trace():
    ds = small_world()
    s = make_schedule(20)
    out, trace = guided_sample(ds.images[0], patch_flow(), ds, s, fast_cfg())
    assert out.shape == (2, 16, 16, 3)
    assert len(trace.diverged) == 2
    assert len(trace.final_losses()) == 2
    recs = trace.to_records()
    assert {"t", "k", "flow_loss", "color_loss", "total_loss", "grad_norm", "grad_norm_clipped"} <= set(recs[0])
    # guided steps run K repeats, unguided run one
    guided_ts = {r["t"] for r in recs if r["k"] == 2}
    assert guided_ts == set(range(5, 21))  # guided_fraction 0.8 of T=20


def test_guided_sample_deterministic():
    ds = small_world()
    s = make_schedule(20)
    cfg = fast_cfg()
    a, _ = guided_sample(ds.images[0], patch_flow(), ds, s, cfg)
    b, _ = guided_sample(ds.images[0], patch_flow(), ds, s, cfg)
    assert torch.equal(a, b)


def test_outside_edit_mask_equals_source():
    ds = small_world()
    s = make_schedule(20)
    src = ds.images[0]
    f = patch_flow()
    out, _ = guided_sample(src, f, ds, s, fast_cfg())
    m = grid.edit_mask(f, 0.5, 2).unsqueeze(-1)
    for i in range(out.shape[0]):
        assert torch.equal(out[i] * (1 - m), src * (1 - m))


def test_zero_scale_matches_unguided_chain():
    # with guidance off the recursion collapses to plain DDIM + replacement
    ds = small_world()
    s = make_schedule(20)
    cfg0 = fast_cfg(global_scale=0.0, recursion_steps=1)
    cfgk = fast_cfg(global_scale=0.0, recursion_steps=7)
    a, ta = guided_sample(ds.images[0], patch_flow(), ds, s, cfg0)
    b, tb = guided_sample(ds.images[0], patch_flow(), ds, s, cfgk)
    assert torch.equal(a, b)
    assert len(ta.entries) == len(tb.entries) == s.T


def test_zero_flow_preserves_source():
    # structure preservation: empty target flow means the edit mask is empty
    # and the output is exactly the source
    ds = small_world()
    s = make_schedule(20)
    src = ds.images[0]
    out, _ = guided_sample(src, torch.zeros(16, 16, 2), ds, s, fast_cfg())
    for i in range(out.shape[0]):
        assert torch.equal(out[i], src)


def test_cancellation_raises():
    import threading

    ds = small_world()
    s = make_schedule(20)
    ev = threading.Event()
    ev.set()
    with pytest.raises(RuntimeError, match="cancelled"):
        guided_sample(ds.images[0], patch_flow(), ds, s, fast_cfg(), cancel=ev)


def test_progress_callback_counts_steps():
    ds = small_world()
    s = make_schedule(20)
    seen = []
    guided_sample(
        ds.images[0], patch_flow(), ds, s, fast_cfg(),
        progress_cb=lambda done, total, trace: seen.append((done, total)),
    )
    assert seen[0] == (1, 20)
    assert seen[-1] == (20, 20)


def test_num_candidates_override():
    ds = small_world()
    s = make_schedule(20)
    out, _ = guided_sample(ds.images[0], patch_flow(), ds, s, fast_cfg(), num_candidates=3)
    assert out.shape[0] == 3


def test_guided_moves_patch_in_two_mode_world():
    # the flow asks for the left patch to move right; guidance should land
    # the chain in the right-patch mode
    ds = small_world()
    s = make_schedule(20)
    cfg = fast_cfg(num_candidates=4, recursion_steps=4)
    out, trace = guided_sample(ds.images[0], patch_flow(), ds, s, cfg)
    order = rerank([(out[i], trace.final_losses()[i], trace.diverged[i]) for i in range(4)])
    best = out[order[0]]
    d = (ds.images - best).flatten(1).norm(dim=1)
    assert int(d.argmin()) == 1
