"""
📊 Evaluation - mean IoU with one-to-one matching, precision/recall at IoU 0.5,
an inference latency benchmark, and detection overlays.

Matching protocol: predictions in descending score order each claim their
highest-IoU unmatched ground truth when that IoU reaches the threshold. Matched
pairs contribute their IoU, unmatched ground truths contribute 0.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import ImageDraw

from .codec import CodecConfig, Detection, decode_detections
from .data import PAGE_BACKGROUND, PageAnnotation, grid_to_pil
from .errors import EmptyBoxError, OutputFileError
from .geometry import BBox, clamp_to_image, corners_array, iou_matrix
from .grid import TensorGrid, round_up
from .model import INPUT_MULTIPLE, HRCenterNet, NetOutput, forward, image_batch
from ..utils.environment_detector import EnvironmentDetector

logger = logging.getLogger(__name__)

MATCH_IOU = 0.5
MIN_TIMED_ITERS = 10


@dataclass
class PageScore:
    n_gt: int
    n_pred: int
    matched: int
    iou_sum: float
    image: str = ""

    @property
    def mean_iou(self) -> float:
        return self.iou_sum / self.n_gt if self.n_gt else 0.0

    @property
    def precision(self) -> float:
        return self.matched / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.matched / self.n_gt if self.n_gt else 0.0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.update(mean_iou=self.mean_iou, precision=self.precision, recall=self.recall)
        return data


@dataclass
class EvalReport:
    mean_iou: float
    precision_at_50: float
    recall_at_50: float
    n_gt: int
    n_pred: int
    per_page: List[PageScore] = field(default_factory=list)

    @classmethod
    def from_pages(cls, pages: Sequence[PageScore]) -> "EvalReport":
        """Fold page scores in page order, weighting by ground-truth count"""
        n_gt = sum(p.n_gt for p in pages)
        n_pred = sum(p.n_pred for p in pages)
        matched = sum(p.matched for p in pages)
        iou_sum = sum(p.iou_sum for p in pages)
        return cls(
            mean_iou=iou_sum / n_gt if n_gt else 0.0,
            precision_at_50=matched / n_pred if n_pred else 0.0,
            recall_at_50=matched / n_gt if n_gt else 0.0,
            n_gt=n_gt,
            n_pred=n_pred,
            per_page=list(pages),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_iou": self.mean_iou,
            "precision_at_50": self.precision_at_50,
            "recall_at_50": self.recall_at_50,
            "n_gt": self.n_gt,
            "n_pred": self.n_pred,
            "per_page": [p.to_dict() for p in self.per_page],
        }


@dataclass
class BenchReport:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    images_per_s: float
    input_size: Tuple[int, int]
    warmup_iters: int
    timed_iters: int
    samples_ms: List[float] = field(default_factory=list)
    parameters: int = 0
    system: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["input_size"] = list(self.input_size)
        return data


def match_and_score(
    preds: Sequence[Detection], gts: Sequence[BBox], iou_thresh: float = MATCH_IOU
) -> PageScore:
    """Greedy score-ordered one-to-one matching for one page"""
    ordered = sorted(preds, key=lambda d: -d.score)
    overlaps = iou_matrix(corners_array(d.bbox for d in ordered), corners_array(gts))
    taken = np.zeros(len(gts), dtype=bool)
    matched = 0
    iou_sum = 0.0
    for i in range(len(ordered)):
        if not len(gts):
            break
        candidates = np.where(taken, -1.0, overlaps[i])
        j = int(np.argmax(candidates))
        if candidates[j] >= iou_thresh:
            taken[j] = True
            matched += 1
            iou_sum += float(candidates[j])
    return PageScore(n_gt=len(gts), n_pred=len(preds), matched=matched, iou_sum=iou_sum)


def predict(model: Any, image: TensorGrid) -> NetOutput:
    """Prediction maps for one image from an HRCenterNet or any (1,C,H,W)->(1,5,h,w) module"""
    if isinstance(model, HRCenterNet):
        return forward(model, image)
    with torch.no_grad():
        return NetOutput.from_tensor(model(image_batch(image)))


def detect(model: Any, image: TensorGrid, codec_cfg: CodecConfig = CodecConfig()) -> List[Detection]:
    """Detections on a page of any size, in the page's own pixels.

    The page is padded at the bottom and right with background up to the next
    multiple of the network's input granularity. Boxes are decoded in the padded
    frame and clamped back to the page; boxes lying wholly in the padding are dropped.
    """
    width, height = image.width, image.height
    padded = image.padded(
        round_up(height, INPUT_MULTIPLE), round_up(width, INPUT_MULTIPLE), PAGE_BACKGROUND
    )
    dets = decode_detections(predict(model, padded), padded.width, padded.height, codec_cfg)
    if padded is image:
        return dets
    kept = []
    for det in dets:
        try:
            kept.append(Detection(clamp_to_image(det.bbox, width, height), det.score))
        except EmptyBoxError:
            continue
    return kept


def evaluate(
    model: Any,
    dataset: Iterable[Tuple[TensorGrid, PageAnnotation]],
    codec_cfg: CodecConfig = CodecConfig(),
    iou_thresh: float = MATCH_IOU,
) -> EvalReport:
    pages = []
    for image, annotation in dataset:
        dets = detect(model, image, codec_cfg)
        score = match_and_score(dets, annotation.boxes, iou_thresh)
        score.image = annotation.image_path
        pages.append(score)
    report = EvalReport.from_pages(pages)
    logger.info(
        "evaluated %d pages: mean IoU %.4f, P@50 %.4f, R@50 %.4f",
        len(pages), report.mean_iou, report.precision_at_50, report.recall_at_50,
    )
    return report


def benchmark_inference(
    model: HRCenterNet,
    input_size: Tuple[int, int] = (512, 512),
    warmup: int = 3,
    iters: int = 20,
    codec_cfg: CodecConfig = CodecConfig(),
    seed: int = 0,
) -> BenchReport:
    """Time forward + decode per image, excluding image loading"""
    if iters < MIN_TIMED_ITERS:
        raise ValueError(f"iters must be at least {MIN_TIMED_ITERS}, got {iters}")
    width, height = input_size
    rng = np.random.default_rng(seed)
    image = TensorGrid(rng.random((model.cfg.input_channels, height, width), dtype=np.float32))
    model.eval()

    def run_once() -> None:
        out = forward(model, image)
        decode_detections(out, width, height, codec_cfg)

    for _ in range(warmup):
        run_once()
    samples = []
    for _ in range(iters):
        started = time.perf_counter()
        run_once()
        samples.append((time.perf_counter() - started) * 1000.0)

    mean_ms = float(np.mean(samples))
    device = str(next(model.parameters()).device)
    return BenchReport(
        mean_ms=mean_ms,
        p50_ms=float(np.percentile(samples, 50)),
        p95_ms=float(np.percentile(samples, 95)),
        images_per_s=1000.0 / mean_ms if mean_ms > 0 else float("inf"),
        input_size=(width, height),
        warmup_iters=warmup,
        timed_iters=iters,
        samples_ms=samples,
        parameters=sum(p.numel() for p in model.parameters()),
        system=EnvironmentDetector(device).get_system_info().to_dict(),
    )


def render_overlay(
    image: TensorGrid,
    detections: Sequence[Detection],
    path: Union[str, Path],
    show_scores: bool = True,
    color: Tuple[int, int, int] = (220, 30, 30),
) -> Path:
    """Write the page as RGB PNG with one outline (and optional score) per detection"""
    path = Path(path)
    canvas = grid_to_pil(image).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    max_x, max_y = canvas.width - 1, canvas.height - 1
    for det in detections:
        x0, y0, x1, y1 = (int(round(v)) for v in det.bbox.to_corners())
        x0, x1 = sorted((min(max(x0, 0), max_x), min(max(x1, 0), max_x)))
        y0, y1 = sorted((min(max(y0, 0), max_y), min(max(y1, 0), max_y)))
        draw.rectangle([x0, y0, x1, y1], outline=color, width=1)
        if show_scores:
            draw.text((x0, max(0, y0 - 10)), f"{det.score:.2f}", fill=color)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        canvas.save(path, format="PNG")
    except OSError as e:
        raise OutputFileError(path, str(e)) from e
    return path


def write_jsonl(records: Iterable[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record) + "\n")
    except OSError as e:
        raise OutputFileError(path, str(e)) from e
    return path
