"""Command-line entry points."""

from __future__ import annotations

import functools
import json
import time
from pathlib import Path

import click

from .checkpoint import checkpoint_load, checkpoint_save
from .dataset import load_dataset, save_dataset
from .errors import TouchsegError
from .experiment import (
    ExperimentConfig,
    build_support_masks,
    evaluate_on,
    experiment_scene_spec,
    margin_sweep,
    run_experiment,
)
from .imprinting import SupportSet, imprint, pool
from .model import PretrainConfig, SegModel, extract_features, pretrain
from .synthetic import CLASS_NAMES, PLANT, generate_scene


def friendly_errors(fn):
    """Surface package errors as clean CLI messages instead of tracebacks."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TouchsegError as e:
            raise click.ClickException(f"{type(e).__name__}: {e}") from e

    return wrapper


@click.group()
def main():
    """Online segmentation refinement by touch-driven weight imprinting."""


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--scenes", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@friendly_errors
def gen_data(out_dir, scenes, seed):
    """Generate a synthetic RGB-D scene dataset."""
    spec = experiment_scene_spec()
    generated = [generate_scene(seed * 10_000 + i, spec)[0] for i in range(scenes)]
    paths = save_dataset(out_dir, generated)
    click.echo(f"wrote {len(paths)} scenes under {out_dir}")


@main.command("pretrain")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--margin", default=0.1, show_default=True)
@click.option("--scale", default=16.0, show_default=True)
@click.option("--lr", default=0.3, show_default=True)
@click.option("--epochs", default=120, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@friendly_errors
def pretrain_cmd(data_dir, margin, scale, lr, epochs, seed, out_path):
    """Pre-train extractor and classifier on a scene dataset."""
    scenes = load_dataset(data_dir)
    cfg = PretrainConfig(margin=margin, scale=scale, lr=lr, epochs=epochs, seed=seed,
                         class_names=CLASS_NAMES)
    t0 = time.time()
    model, losses = pretrain([(s.rgb, s.train_labels) for s in scenes], cfg)
    checkpoint_save(model, out_path)
    rep = evaluate_on(model, scenes)
    click.echo(f"pretrained in {time.time() - t0:.1f}s, final loss {losses[-1]:.4f}, "
               f"train mIoU {rep.mean_iou:.3f} -> {out_path}")


@main.command("imprint")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--support", "support_dir", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["map", "rap"]), default="rap", show_default=True)
@click.option("--strokes", default=45, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@friendly_errors
def imprint_cmd(ckpt, support_dir, method, strokes, seed, out_path):
    """Refine a checkpoint with simulated touches on support scenes."""
    model = checkpoint_load(ckpt)
    support = load_dataset(support_dir)
    cfg = ExperimentConfig(seed=seed, strokes=strokes)
    t0 = time.time()
    _, train_masks, stats = build_support_masks(model, support, cfg)
    SupportSet(pairs=list(zip([s.rgb for s in support], train_masks)))  # validates the few-shot input
    feats = [extract_features(s.rgb, model.extractor) for s in support]
    proto = pool(feats, train_masks, method)
    refined = SegModel(model.extractor, imprint(model.head, proto, PLANT))
    checkpoint_save(refined, out_path)
    click.echo(f"imprinted {method.upper()} class from {stats['mask_pixels']} mask pixels "
               f"in {time.time() - t0:.2f}s -> {out_path}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--test", "test_dir", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True)
@friendly_errors
def eval_cmd(ckpt, test_dir, as_json):
    """Evaluate a checkpoint on a scene dataset (imprinted classes fold back)."""
    model = checkpoint_load(ckpt)
    scenes = load_dataset(test_dir)
    rep = evaluate_on(model, scenes, model.head.fold_mapping())
    if as_json:
        click.echo(json.dumps(rep.to_dict(), indent=1))
        return
    for j, name in enumerate(rep.class_names):
        iou = f"{100 * rep.iou[j]:.2f}" if rep.iou[j] is not None else "n/a"
        click.echo(f"{name:12s} IoU {iou}")
    click.echo(f"{'mean':12s} IoU {100 * rep.mean_iou:.2f}")


@main.command("experiment")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@friendly_errors
def experiment_cmd(seed, out_dir):
    """Run the Before / MD / WI-MAP / WI-RAP comparison."""
    report = run_experiment(ExperimentConfig(seed=seed), out_dir=out_dir)
    click.echo(report.to_text())
    if out_dir:
        click.echo(f"\nreport and prediction images under {out_dir}")


@main.command("sweep")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@friendly_errors
def sweep_cmd(seed, out_dir):
    """Mean IoU of Before / WI-MAP / WI-RAP across pre-training margins."""
    report = margin_sweep(ExperimentConfig(seed=seed))
    click.echo(report.to_text())
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(json.dumps(report.to_dict(), indent=1))
        (out / "sweep.txt").write_text(report.to_text() + "\n")
        click.echo(f"\nwrote {out / 'sweep.json'}")


@main.command("serve")
@click.option("--port", default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="directory with the built web console")
@friendly_errors
def serve_cmd(port, host, data_dir, ckpt, static_dir):
    """Serve the interactive refinement API (forward passes only)."""
    from .service import serve

    click.echo(f"serving {data_dir} with {ckpt} on {host}:{port}")
    serve(port=port, data_dir=data_dir, checkpoint_path=ckpt, host=host, static_dir=static_dir)


if __name__ == "__main__":
    main()
