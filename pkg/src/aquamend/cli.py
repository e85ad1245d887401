"""Command-line interface for the underwater enhancement toolkit.

Subcommands: train, enhance, degrade, attention, stats, evaluate, split.
Directory batches are processed in lexicographic order; per-image work may
run on a worker pool capped by the AQUAMEND_THREADS environment variable.
All CSV and image outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import csv
import io
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import click

from . import metrics as metrics_mod
from .attention import attention_map
from .degradation import degrade_once, degrade_twice
from .image import channel_stats, load_image, save_image, stretch_histogram
from .network import load_checkpoint
from .trainer import discover_images, enhance, fit, load_config, split_dataset


def worker_count() -> int:
    """Worker-pool size, capped by AQUAMEND_THREADS when set."""
    cap = os.environ.get("AQUAMEND_THREADS")
    cpus = os.cpu_count() or 1
    if cap is None:
        return cpus
    try:
        value = int(cap)
    except ValueError:
        raise click.ClickException(f"AQUAMEND_THREADS must be an integer, got {cap!r}")
    return max(1, min(cpus, value))


def _parallel_map(fn, items: list) -> list:
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _require_images(directory: str) -> list:
    paths = discover_images(directory)
    if not paths:
        raise click.ClickException(f"no images found in {directory}")
    return paths


def _write_csv_atomic(path: str, header: list, rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value: float) -> str:
    return format(value, ".10g")


@click.group()
def main() -> None:
    """Self-supervised underwater image enhancement toolkit."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def train(config_path: str) -> None:
    """Train the autoencoder from a key=value config file."""
    cfg = load_config(config_path)
    if not cfg.dataset_dir:
        raise click.ClickException("config must set dataset_dir")
    if not cfg.checkpoint_dir:
        raise click.ClickException("config must set checkpoint_dir")
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    log_path = os.path.join(cfg.checkpoint_dir, "training_log.csv")

    def report(record):
        click.echo(
            f"epoch {record.epoch}: train {record.train.total:.6f} "
            f"val {record.val_loss:.6f} ({record.seconds:.1f}s)"
        )

    fit(cfg, log_path=log_path, progress=report)
    click.echo(f"checkpoint written to {os.path.join(cfg.checkpoint_dir, 'model.aqmd')}")


@main.command("enhance")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
def enhance_cmd(model_path: str, input_dir: str, output_dir: str) -> None:
    """Enhance every image in a directory with a trained model."""
    params = load_checkpoint(model_path)
    paths = _require_images(input_dir)
    os.makedirs(output_dir, exist_ok=True)

    def work(path: str) -> str:
        out = enhance(params, load_image(path))
        target = os.path.join(output_dir, os.path.basename(path))
        save_image(out, target)
        return target

    for target in _parallel_map(work, paths):
        click.echo(target)


_STAGES = {
    "dbn": lambda img: degrade_once(img),
    "star": lambda img: degrade_twice(img),
    "stretch": lambda img: stretch_histogram(img),
}


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--stage", type=click.Choice(sorted(_STAGES)), default=None,
              help="Write only one stage instead of all three.")
def degrade(input_dir: str, output_dir: str, stage: str | None) -> None:
    """Write the degradation-pipeline images for inspection."""
    paths = _require_images(input_dir)
    os.makedirs(output_dir, exist_ok=True)
    stages = {stage: _STAGES[stage]} if stage else _STAGES

    def work(path: str) -> list:
        img = load_image(path)
        stem, ext = os.path.splitext(os.path.basename(path))
        written = []
        for name, fn in stages.items():
            target = os.path.join(output_dir, f"{stem}_{name}{ext}")
            save_image(fn(img), target)
            written.append(target)
        return written

    for targets in _parallel_map(work, paths):
        for target in targets:
            click.echo(target)


@main.command("attention")
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
def attention_cmd(input_dir: str, output_dir: str) -> None:
    """Write the attention image of every input image."""
    paths = _require_images(input_dir)
    os.makedirs(output_dir, exist_ok=True)

    def work(path: str) -> str:
        result = attention_map(load_image(path))
        stem, ext = os.path.splitext(os.path.basename(path))
        target = os.path.join(output_dir, f"{stem}_at{ext}")
        save_image(result.i_at, target)
        return target

    for target in _parallel_map(work, paths):
        click.echo(target)


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False))
def stats(input_dir: str, csv_path: str) -> None:
    """Per-channel min/max/mean/median over an image sequence."""
    paths = _require_images(input_dir)

    def work(path: str) -> list:
        st = channel_stats(load_image(path))
        row = [os.path.basename(path)]
        for values in (st.min, st.max, st.mean, st.median):
            row.extend(_fmt(v) for v in values)
        return row

    header = ["image"]
    for name in ("min", "max", "mean", "median"):
        header.extend(f"{name}_{ch}" for ch in "rgb")
    _write_csv_atomic(csv_path, header, _parallel_map(work, paths))
    click.echo(csv_path)


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--reference", "reference_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--csv", "csv_path", required=True, type=click.Path(dir_okay=False))
def evaluate(input_dir: str, reference_dir: str | None, csv_path: str) -> None:
    """Quality metrics per image; full-reference ones need --reference.

    References pair by file name.  Absent values are left empty.
    """
    paths = _require_images(input_dir)
    ref_paths = {}
    if reference_dir is not None:
        ref_paths = {os.path.basename(p): p for p in discover_images(reference_dir)}

    def work(path: str) -> list:
        name = os.path.basename(path)
        img = load_image(path)
        ref_path = ref_paths.get(name)
        reference = load_image(ref_path) if ref_path else None
        values = metrics_mod.evaluate_image(img, reference)
        row = [name, os.path.basename(ref_path) if ref_path else ""]
        order = ("mse", "psnr", "ssim", "gmsd", "ciede2000", "uciqe", "uiqm")
        row.extend(_fmt(values[m]) if m in values else "" for m in order)
        return row

    header = ["image", "reference", "mse", "psnr", "ssim", "gmsd", "ciede2000", "uciqe", "uiqm"]
    _write_csv_atomic(csv_path, header, _parallel_map(work, paths))
    click.echo(csv_path)


@main.command()
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--fraction", default=0.9, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
def split(input_dir: str, fraction: float, seed: int) -> None:
    """Deterministically split a directory into train/holdout lists."""
    if not 0.0 < fraction < 1.0:
        raise click.ClickException("--fraction must lie strictly between 0 and 1")
    paths = _require_images(input_dir)
    train_paths, holdout_paths = split_dataset(paths, fraction, seed)
    for name, group in (("train", train_paths), ("holdout", holdout_paths)):
        for path in group:
            click.echo(f"{name},{os.path.basename(path)}")


if __name__ == "__main__":
    sys.exit(main())
