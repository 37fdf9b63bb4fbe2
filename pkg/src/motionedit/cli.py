"""Command-line entry points: dataset generation, flow synthesis, flow
estimation, guided sampling, benchmark evaluation, and the HTTP service."""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from pathlib import Path

import click
import torch

from . import bench
from .diffusion import EmpiricalDataset, make_schedule
from .estimator import estimate_flow, heldout_estimator
from .flowio import read_flo, visualize_flow, write_flo
from .flowsynth import apply_spec, load_spec
from .guidance import GuidanceConfig, config_from_dict
from .images import load_png, save_png


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_config(path) -> GuidanceConfig:
    if path is None:
        return GuidanceConfig()
    try:
        with open(path) as fh:
            return config_from_dict(json.load(fh))
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        _fail(f"config: {exc}")


@click.group()
def main():
    """Motion-guided diffusion editing over procedural image priors."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--canvas", default=64, show_default=True)
@click.option("--seed", "background_seed", default=1234, show_default=True)
@click.option("--shape", "shape_kind", default="square", show_default=True)
def dataset(out_dir, canvas, background_seed, shape_kind):
    """Generate the shapes dataset (PNGs plus manifest.json)."""
    try:
        spec = bench.ShapesDatasetSpec(
            canvas=canvas, background_seed=background_seed, shape_kind=shape_kind
        )
        ds = bench.gen_shapes_dataset(spec)
        manifest = bench.save_dataset(ds, out_dir)
    except ValueError as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(ds)} images, manifest {manifest}")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--preview", type=click.Path(), default=None)
def flow(spec_path, out_path, preview):
    """Synthesize a target flow from a FlowSpec JSON document."""
    try:
        f = apply_spec(load_spec(spec_path))
    except (ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
        _fail(f"spec: {exc}")
    write_flo(out_path, f)
    if preview:
        save_png(preview, visualize_flow(f))
    click.echo(f"wrote {out_path} ({f.shape[0]}x{f.shape[1]})")


@main.command()
@click.option("--a", "path_a", required=True, type=click.Path(exists=True))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--preview", type=click.Path(), default=None)
@click.option("--heldout", is_flag=True, help="Use the evaluation estimator.")
def estimate(path_a, path_b, out_path, preview, heldout):
    """Estimate dense flow between two images and write a .flo file."""
    I1, I2 = load_png(path_a), load_png(path_b)
    try:
        with torch.no_grad():
            f = heldout_estimator(I1, I2) if heldout else estimate_flow(I1, I2)
    except ValueError as exc:
        _fail(str(exc))
    write_flo(out_path, f)
    if preview:
        save_png(preview, visualize_flow(f))
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--flow", "flow_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "manifest", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--num-steps", default=100, show_default=True)
def sample(source, flow_path, manifest, config_path, out_dir, num_steps):
    """Run guided sampling; writes result.png, trace.json, flow preview."""
    cfg = _load_config(config_path)
    try:
        ds = EmpiricalDataset.from_manifest(manifest)
        x_star = load_png(source)
        f_target = read_flo(flow_path)
        schedule = make_schedule(num_steps)
        if f_target.shape[:2] != x_star.shape[:2]:
            raise ValueError("flow extent does not match source image")
        from .guidance import guided_sample, rerank

        imgs, trace = guided_sample(x_star, f_target, ds, schedule, cfg)
        finals = trace.final_losses()
        order = rerank([(imgs[i], finals[i], trace.diverged[i]) for i in range(imgs.shape[0])])
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "result.png", imgs[order[0]])
    for rank, idx in enumerate(order):
        save_png(out / f"candidate_{rank:02d}.png", imgs[idx])
    save_png(out / "flow.png", visualize_flow(f_target))
    with open(out / "trace.json", "w") as fh:
        json.dump(
            {
                "ranking": order,
                "diverged": trace.diverged,
                "final_losses": finals,
                "entries": trace.to_records(),
            },
            fh,
        )
    click.echo(f"wrote {out / 'result.png'}")


@main.command("eval")
@click.option("--bench", "bench_name", default="standard", show_default=True)
@click.option("--cases", default=5, show_default=True)
@click.option("--seeds", default=1, show_default=True)
@click.option("--methods", default="guided,sdedit,repaint", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--num-steps", default=100, show_default=True)
@click.option("--sdedit-t0", default=0.8, show_default=True, help="Fraction of T.")
@click.option("--out", "out_path", required=True, type=click.Path())
def eval_cmd(bench_name, cases, seeds, methods, config_path, num_steps, sdedit_t0, out_path):
    """Run the translation benchmark; writes a JSONL report."""
    if bench_name != "standard":
        _fail(f"unknown benchmark {bench_name!r}")
    cfg = _load_config(config_path)
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    known = {"guided", "sdedit", "repaint"} | {
        f"ablation:{v}" for v in bench.ABLATION_VARIANTS
    }
    for m in method_list:
        if m not in known:
            _fail(f"unknown method {m!r}")

    spec = bench.ShapesDatasetSpec()
    ds = bench.gen_shapes_dataset(spec)
    schedule = make_schedule(num_steps)
    case_list = bench.gen_translation_benchmark(ds, spec, cases, seed=0)
    t0 = int(round(sdedit_t0 * schedule.T))

    records = []
    for ci, case in enumerate(case_list):
        for method in method_list:
            for seed in range(seeds):
                run_cfg = dataclasses.replace(cfg, seed=seed)
                start = time.time()
                if method == "guided":
                    img, _, _ = bench.run_guided_case(case, ds, schedule, run_cfg)
                elif method == "sdedit":
                    img = bench.baseline_sdedit(
                        ds.images[case.source_index], case.flow, t0, ds, schedule, seed
                    )
                elif method == "repaint":
                    img = bench.baseline_repaint(
                        ds.images[case.source_index], case.flow, run_cfg.recursion_steps,
                        ds, schedule, seed,
                    )
                else:
                    variant = method.split(":", 1)[1]
                    vcfg = bench.ablation_config(run_cfg, variant)
                    img, _, _ = bench.run_guided_case(case, ds, schedule, vcfg)
                report = bench.evaluate_case_output(case, ds, img, run_cfg)
                records.append(
                    {
                        "case": ci,
                        "method": method,
                        "seed": seed,
                        "displacement": list(case.displacement),
                        "runtime_s": round(time.time() - start, 3),
                        **report,
                    }
                )
                click.echo(
                    f"case={ci} method={method} seed={seed} "
                    f"flow_edit={report['flow_metric']['edit_region']:.3f}",
                    err=True,
                )
    with open(out_path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    click.echo(f"wrote {len(records)} records to {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
@click.option("--workers", default=2, show_default=True, help="Concurrent sampling jobs.")
@click.option("--data-dir", type=click.Path(), default=None)
def serve(host, port, workers, data_dir):
    """Start the local HTTP job service."""
    import uvicorn

    from .service import create_app

    app = create_app(max_workers=workers, data_dir=data_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
