#!/usr/bin/env python3
"""
🏯 HRCenterNet CLI - Command Line Interface for the detection toolkit

Subcommands: synth, import, encode, train, infer, eval, bench, viz. Each run writes one
manifest next to its outputs. Progress and logs go to stderr, tables to stdout.
"""

import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import click
from rich.console import Console
from rich.table import Table

from .. import __version__
from ..core.checkpoint import load_model, save_model
from ..core.codec import CodecConfig, encode_targets
from ..core.data import (
    Mthv2Importer,
    PageAnnotation,
    load_annotations,
    load_page_image,
    resolve_image_path,
    save_annotations,
    save_page_image,
    split_pages,
    write_tensor,
)
from ..core.errors import InputFileError
from ..core.evaluation import (
    BenchReport,
    EvalReport,
    benchmark_inference,
    detect,
    evaluate,
    render_overlay,
    write_jsonl,
)
from ..core.grid import TensorGrid, round_up
from ..core.model import HRCenterNet, build_model, count_parameters
from ..core.pipeline_core import PipelineCore
from ..core.run_manifest import RunManifest, save_manifest
from ..core.synth import generate_pages
from ..core.training import EpochRecord, PageDataset, Trainer
from ..utils.environment_detector import EnvironmentDetector
from ..utils.logging_setup import configure_logging

ANNOTATION_FILE = "annotations.jsonl"
PRESETS = ["toy", "paper-w32"]

console = Console()


class ReportPrinter:
    """
    📊 Renders toolkit reports as rich tables
    """

    def __init__(self, out: Optional[Console] = None):
        self.console = out or console

    def display_eval_report(self, report: EvalReport, title: str = "📊 Detection Quality"):
        table = Table(title=title)
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="green", justify="right")
        table.add_row("mean IoU", f"{report.mean_iou:.4f}")
        table.add_row("precision @ IoU 0.5", f"{report.precision_at_50:.4f}")
        table.add_row("recall @ IoU 0.5", f"{report.recall_at_50:.4f}")
        table.add_row("ground-truth boxes", str(report.n_gt))
        table.add_row("predicted boxes", str(report.n_pred))
        table.add_row("pages", str(len(report.per_page)))
        self.console.print(table)

    def display_bench_report(self, report: BenchReport):
        w, h = report.input_size
        table = Table(title=f"⏱️ Inference latency ({w}x{h})")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="green", justify="right")
        table.add_row("mean (ms)", f"{report.mean_ms:.2f}")
        table.add_row("p50 (ms)", f"{report.p50_ms:.2f}")
        table.add_row("p95 (ms)", f"{report.p95_ms:.2f}")
        table.add_row("images / s", f"{report.images_per_s:.2f}")
        table.add_row("parameters", f"{report.parameters:,}")
        table.add_row("timed iters", str(report.timed_iters))
        table.add_row("device", str(report.system.get("device", "?")))
        self.console.print(table)

    def display_training_history(self, history: Sequence[EpochRecord]):
        table = Table(title="🏋️ Training")
        table.add_column("Epoch", justify="right")
        table.add_column("Loss", style="green", justify="right")
        table.add_column("Seconds", style="dim", justify="right")
        for record in history:
            table.add_row(str(record.epoch + 1), f"{record.mean_loss:.4f}", f"{record.seconds:.1f}")
        self.console.print(table)


_SHARED_OPTIONS = (
    click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Random seed"),
    click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None, help="YAML config file"),
    click.option("--out", type=click.Path(path_type=Path), default=None, help="Output path"),
    click.option("--preset", type=click.Choice(PRESETS), default=None, help="Config preset"),
)


def shared_options(func: Callable) -> Callable:
    """--seed, --config, --out and --preset for every subcommand"""
    for option in reversed(_SHARED_OPTIONS):
        func = option(func)
    return func


def _drop_none(mapping: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in mapping.items() if v is not None}


def _core(config_path: Optional[Path], preset: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> PipelineCore:
    core = PipelineCore(config_path, preset, overrides)
    configure_logging(core.logging_settings())
    return core


def _manifest(command: str, core: PipelineCore, seed: Optional[int]) -> RunManifest:
    return RunManifest(
        command=command,
        config=core.config,
        seed=seed,
        version=__version__,
        system=EnvironmentDetector(core.section("training").get("device", "cpu")).get_system_info().to_dict(),
    )


def _require(path: Path) -> Path:
    if not path.exists():
        raise InputFileError(path)
    return path


def _annotation_file(data: Path) -> Path:
    _require(data)
    return _require(data / ANNOTATION_FILE) if data.is_dir() else data


def _load_model(model_path: Path, core: PipelineCore) -> HRCenterNet:
    _require(model_path)
    model = load_model(model_path)
    device = core.section("training").get("device", "cpu")
    return model.to(EnvironmentDetector.resolve_device(device))


def _pages_with_images(
    pages: Sequence[PageAnnotation], annotation_file: Path, channels: int
) -> Iterator[Tuple[TensorGrid, PageAnnotation]]:
    for page in pages:
        yield load_page_image(resolve_image_path(page, annotation_file), channels), page


def _codec(core: PipelineCore, conf: Optional[float], nms_iou: Optional[float]) -> CodecConfig:
    return replace(
        core.codec_config(),
        **_drop_none({"conf_thresh": conf, "nms_iou": nms_iou}),
    )


def decode_options(func: Callable) -> Callable:
    func = click.option("--nms-iou", type=float, default=None, help="NMS IoU threshold (default 0.5)")(func)
    func = click.option("--conf", type=float, default=None, help="Confidence threshold (default 0.3)")(func)
    return func


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="hrcenternet")
def cli():
    """🏯 HRCenterNet - anchorless character detection for historical documents"""


@cli.command()
@shared_options
@click.option("--pages", type=click.IntRange(min=1), default=10, show_default=True, help="Pages to generate")
@click.option("--noise", type=click.FloatRange(0, 1), default=None, help="Noise level override")
def synth(seed, config_path, out, preset, pages, noise):
    """Generate synthetic pages with character annotations."""
    core = _core(config_path, preset, {"synth": _drop_none({"noise_level": noise})})
    out = out or Path("synth_data")
    cfg = replace(core.synth_config(), seed=seed)
    manifest = _manifest("synth", core, seed)
    out.mkdir(parents=True, exist_ok=True)

    annotations = []
    outputs: List[Path] = []
    for image, annotation in generate_pages(cfg, pages):
        outputs.append(save_page_image(image, out / annotation.image_path))
        annotations.append(annotation)
    outputs.append(save_annotations(annotations, out / ANNOTATION_FILE))
    save_manifest(manifest.finish(outputs), out)
    n_boxes = sum(len(a.boxes) for a in annotations)
    console.print(f"✨ Generated {pages} pages with {n_boxes} characters in {out}")
    return 0


@cli.command(name="import")
@shared_options
@click.option("--data", type=click.Path(path_type=Path), required=True, help="MTHv2 character annotation directory")
def import_command(seed, config_path, out, preset, data):
    """Convert MTHv2 character annotations into an annotation file."""
    core = _core(config_path, preset)
    _require(data)
    out = out or data / ANNOTATION_FILE
    manifest = _manifest("import", core, seed)

    importer = Mthv2Importer(data)
    pages = [
        replace(p, image_path=os.path.relpath(data / p.image_path, out.parent))
        for p in importer.import_pages()
    ]
    save_annotations(pages, out)
    save_manifest(manifest.finish([out]), out)
    n_boxes = sum(len(p.boxes) for p in pages)
    console.print(
        f"📥 Imported {len(pages)} pages with {n_boxes} characters to {out} "
        f"({importer.clamped_boxes} clamped, {importer.dropped_boxes} dropped)"
    )
    return 0


@cli.command()
@shared_options
@click.option("--data", type=click.Path(path_type=Path), required=True, help="Dataset dir or annotation file")
def encode(seed, config_path, out, preset, data):
    """Encode annotated pages into heatmap/size/offset/mask tensor files.

    Page sides that are not a multiple of the stride are padded up to one.
    """
    core = _core(config_path, preset)
    ann_file = _annotation_file(data)
    out = out or Path("targets")
    codec_cfg = core.codec_config()
    manifest = _manifest("encode", core, seed)

    outputs: List[Path] = []
    collisions = 0
    for page in load_annotations(ann_file):
        width = round_up(page.width, codec_cfg.stride)
        height = round_up(page.height, codec_cfg.stride)
        targets = encode_targets(page.boxes, width, height, codec_cfg)
        collisions += targets.collisions
        stem = Path(page.image_path).stem
        for name, grid in (
            ("heatmap", targets.heatmap),
            ("size", targets.size_map),
            ("offset", targets.offset_map),
            ("mask", targets.mask),
        ):
            outputs.append(write_tensor(out / f"{stem}.{name}.hrtg", grid))
    save_manifest(manifest.finish(outputs), out)
    console.print(f"🎯 Wrote {len(outputs)} tensor files to {out} ({collisions} center collisions)")
    return 0


@cli.command()
@shared_options
@click.option("--data", type=click.Path(path_type=Path), required=True, help="Dataset dir or annotation file")
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Training epochs (default 30)")
@click.option("--batch-size", type=click.IntRange(min=1), default=None, help="Batch size (default 8)")
@click.option("--lr", type=float, default=None, help="Adam learning rate (default 1e-6)")
@click.option("--input-size", type=click.IntRange(min=32), default=None, help="Crop size (default 512)")
def train(seed, config_path, out, preset, data, epochs, batch_size, lr, input_size):
    """Train a model and evaluate it on the held-out split."""
    overrides = {"training": _drop_none({"epochs": epochs, "batch_size": batch_size, "lr": lr, "input_size": input_size})}
    core = _core(config_path, preset, overrides)
    ann_file = _annotation_file(data)
    out = out or Path("model.ckpt")
    settings = replace(core.train_settings(), seed=seed)
    settings = replace(settings, device=EnvironmentDetector.resolve_device(settings.device))
    model_cfg = core.model_config()
    codec_cfg = core.codec_config()
    manifest = _manifest("train", core, seed)

    train_pages, test_pages = split_pages(load_annotations(ann_file), settings.test_fraction, seed)
    dataset = PageDataset.from_annotations(
        train_pages,
        ann_file,
        input_size=settings.input_size,
        codec_cfg=codec_cfg,
        channels=model_cfg.input_channels,
        seed=seed,
        keep_fraction=settings.crop_keep_fraction,
    )
    model = build_model(model_cfg, seed)
    console.print(f"🧠 Training {count_parameters(model):,} parameters on {len(train_pages)} pages")
    trainer = Trainer(model, settings, core.loss_weights())
    history = trainer.fit(dataset)
    outputs = [save_model(trainer.model, out)]

    printer = ReportPrinter()
    printer.display_training_history(history)
    if test_pages:
        report = evaluate(
            trainer.model,
            _pages_with_images(test_pages, ann_file, model_cfg.input_channels),
            codec_cfg,
        )
        printer.display_eval_report(report, title="📊 Held-out split")
    save_manifest(manifest.finish(outputs), out)
    return 0


@cli.command()
@shared_options
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True, help="Checkpoint file")
@click.option("--image", "images", type=click.Path(path_type=Path), multiple=True, required=True, help="Page image (repeatable)")
@decode_options
def infer(seed, config_path, out, preset, model_path, images, conf, nms_iou):
    """Detect characters on page images."""
    core = _core(config_path, preset)
    codec_cfg = _codec(core, conf, nms_iou)
    model = _load_model(model_path, core)
    out = out or Path("detections.jsonl")
    manifest = _manifest("infer", core, seed)

    records = []
    for image_path in images:
        image = load_page_image(_require(image_path), model.cfg.input_channels)
        dets = detect(model, image, codec_cfg)
        records.append({"image": str(image_path), "boxes": [d.to_list() for d in dets]})
        console.print(f"🔍 {image_path}: {len(dets)} characters")
    write_jsonl(records, out)
    save_manifest(manifest.finish([out]), out)
    return 0


@cli.command(name="eval")
@shared_options
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True, help="Checkpoint file")
@click.option("--data", type=click.Path(path_type=Path), required=True, help="Dataset dir or annotation file")
@click.option("--split", type=click.Choice(["all", "test"]), default="all", show_default=True, help="Pages to score")
@decode_options
def eval_command(seed, config_path, out, preset, model_path, data, split, conf, nms_iou):
    """Score a model: mean IoU, precision and recall at IoU 0.5."""
    core = _core(config_path, preset)
    codec_cfg = _codec(core, conf, nms_iou)
    model = _load_model(model_path, core)
    ann_file = _annotation_file(data)
    out = out or Path("eval.jsonl")
    manifest = _manifest("eval", core, seed)

    pages = load_annotations(ann_file)
    if split == "test":
        _, pages = split_pages(pages, core.train_settings().test_fraction, seed)
    iou_thresh = float(core.section("eval").get("iou_thresh", 0.5))
    report = evaluate(model, _pages_with_images(pages, ann_file, model.cfg.input_channels), codec_cfg, iou_thresh)
    ReportPrinter().display_eval_report(report)
    write_jsonl([report.to_dict()], out)
    save_manifest(manifest.finish([out]), out)
    return 0


@cli.command()
@shared_options
@click.option("--model", "model_path", type=click.Path(path_type=Path), default=None, help="Checkpoint (default: freshly built preset model)")
@click.option("--input-size", type=click.IntRange(min=32), default=None, help="Square input size (default 512)")
@click.option("--warmup", type=click.IntRange(min=0), default=None, help="Warmup iterations")
@click.option("--iters", type=click.IntRange(min=10), default=None, help="Timed iterations")
def bench(seed, config_path, out, preset, model_path, input_size, warmup, iters):
    """Time forward + decode per image."""
    core = _core(config_path, preset)
    model = _load_model(model_path, core) if model_path else build_model(core.model_config(), seed)
    size = input_size or core.train_settings().input_size
    bench_cfg = core.section("bench")
    out = out or Path("bench.jsonl")
    manifest = _manifest("bench", core, seed)

    report = benchmark_inference(
        model,
        (size, size),
        warmup=warmup if warmup is not None else int(bench_cfg.get("warmup", 3)),
        iters=iters or int(bench_cfg.get("iters", 20)),
        codec_cfg=core.codec_config(),
        seed=seed,
    )
    ReportPrinter().display_bench_report(report)
    write_jsonl([report.to_dict()], out)
    save_manifest(manifest.finish([out]), out)
    return 0


@cli.command()
@shared_options
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True, help="Checkpoint file")
@click.option("--image", "image_path", type=click.Path(path_type=Path), required=True, help="Page image")
@click.option("--no-scores", is_flag=True, default=False, help="Draw boxes without score labels")
@decode_options
def viz(seed, config_path, out, preset, model_path, image_path, no_scores, conf, nms_iou):
    """Render detections over a page as PNG."""
    core = _core(config_path, preset)
    codec_cfg = _codec(core, conf, nms_iou)
    model = _load_model(model_path, core)
    image = load_page_image(_require(image_path), model.cfg.input_channels)
    out = out or image_path.with_name(f"{image_path.stem}.overlay.png")
    manifest = _manifest("viz", core, seed)

    dets = detect(model, image, codec_cfg)
    render_overlay(image, dets, out, show_scores=not no_scores)
    save_manifest(manifest.finish([out]), out)
    console.print(f"🖼️ {len(dets)} detections drawn to {out}")
    return 0
