"""
🏋️ Training - dataset plumbing, the Adam step and the epoch loop.

The loss gradients come straight from the loss module: ``CompositeLossFunction``
evaluates the analytic objective per image in its forward pass and hands the
analytic gradient back to autograd in its backward pass. The batch loss is the
mean of the per-image losses.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .codec import CodecConfig, TargetSet, encode_targets
from .data import (
    CROP_KEEP_FRACTION,
    PAGE_BACKGROUND,
    PageAnnotation,
    load_page_image,
    random_crop,
    resolve_image_path,
)
from .errors import ConfigError, TrainingDivergedError
from .grid import TensorGrid
from .loss import LossReport, LossWeights, total_terms
from .model import HRCenterNet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-6
    input_size: int = 512
    crop_keep_fraction: float = CROP_KEEP_FRACTION
    test_fraction: float = 0.1
    seed: int = 0
    num_workers: int = 0
    device: str = "cpu"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size positive")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.input_size <= 0 or self.input_size % 32:
            raise ConfigError(f"input_size must be a positive multiple of 32, got {self.input_size}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainSettings":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**known)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid training settings: {e}") from e


class CompositeLossFunction(torch.autograd.Function):
    """Mean per-image objective over a (N, 5, h, w) head output.

    Per-image LossReports are appended to ``sink``.
    """

    @staticmethod
    def forward(ctx, output, targets, weights, sink):
        preds = output.detach().cpu().double().numpy()
        n = len(targets)
        if preds.shape[0] != n:
            raise ValueError(f"{preds.shape[0]} outputs but {n} target sets")
        grads = np.empty_like(preds)
        total = 0.0
        for i, target in enumerate(targets):
            report, grad = total_terms(preds[i], target, weights)
            sink.append(report)
            grads[i] = grad / n
            total += report.total
        ctx.grads = torch.from_numpy(grads).to(output.device, output.dtype)
        return output.new_tensor(total / n)

    @staticmethod
    def backward(ctx, grad_output):
        return ctx.grads * grad_output, None, None, None


def merge_reports(reports: Sequence[LossReport]) -> LossReport:
    n = max(len(reports), 1)
    return LossReport(
        l_h=sum(r.l_h for r in reports) / n,
        l_s=sum(r.l_s for r in reports) / n,
        l_offset=sum(r.l_offset for r in reports) / n,
        total=sum(r.total for r in reports) / n,
        n_objects=sum(r.n_objects for r in reports),
    )


def batch_loss(
    output: torch.Tensor, targets: Sequence[TargetSet], weights: LossWeights
) -> Tuple[torch.Tensor, LossReport]:
    """Differentiable batch loss plus its component report"""
    reports: List[LossReport] = []
    value = CompositeLossFunction.apply(output, list(targets), weights, reports)
    return value, merge_reports(reports)


def make_optimizer(model: HRCenterNet, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def stack_images(images: Sequence[TensorGrid]) -> torch.Tensor:
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ValueError(f"batch images must share dims, got {sorted(shapes)}")
    return torch.stack([img.to_tensor() for img in images])


def train_step(
    model: HRCenterNet,
    batch: Sequence[Tuple[TensorGrid, TargetSet]],
    optimizer: torch.optim.Optimizer,
    weights: LossWeights = LossWeights(),
    step: int = 0,
) -> LossReport:
    """One Adam update on a batch; returns the pre-update batch loss"""
    if not batch:
        raise ValueError("batch must not be empty")
    images = stack_images([img for img, _ in batch])
    targets = [t for _, t in batch]
    return train_step_tensors(model, images, targets, optimizer, weights, step)


def train_step_tensors(
    model: HRCenterNet,
    images: torch.Tensor,
    targets: Sequence[TargetSet],
    optimizer: torch.optim.Optimizer,
    weights: LossWeights,
    step: int = 0,
) -> LossReport:
    param = next(model.parameters())
    model.train()
    optimizer.zero_grad(set_to_none=True)
    output = model(images.to(param.device, param.dtype))
    value, report = batch_loss(output, targets, weights)
    if not math.isfinite(report.total):
        raise TrainingDivergedError(step, report.to_dict())
    value.backward()
    optimizer.step()
    return report


class PageDataset(Dataset):
    """Pages cropped to ``input_size`` and encoded into targets.

    Items are either in-memory (image, annotation) pairs or annotations whose
    images are loaded from disk. Cropping is seeded by (seed, epoch, index).
    Pages smaller than the crop are padded with background first.
    """

    def __init__(
        self,
        pages: Sequence[Tuple[Any, PageAnnotation]],
        input_size: int,
        codec_cfg: CodecConfig = CodecConfig(),
        channels: int = 1,
        seed: int = 0,
        keep_fraction: float = CROP_KEEP_FRACTION,
    ):
        self.pages = list(pages)
        self.input_size = input_size
        self.codec_cfg = codec_cfg
        self.channels = channels
        self.seed = seed
        self.keep_fraction = keep_fraction
        self.epoch = 0

    @classmethod
    def from_annotations(
        cls, pages: Sequence[PageAnnotation], annotation_file: Path, **kwargs: Any
    ) -> "PageDataset":
        return cls([(resolve_image_path(p, annotation_file), p) for p in pages], **kwargs)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.pages)

    def _image(self, source: Any) -> TensorGrid:
        return source if isinstance(source, TensorGrid) else load_page_image(source, self.channels)

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, TargetSet]:
        source, annotation = self.pages[index]
        image = self._image(source).padded(self.input_size, self.input_size, PAGE_BACKGROUND)
        rng = np.random.default_rng((self.seed, self.epoch, index))
        image, annotation = random_crop(
            image, annotation, self.input_size, self.input_size, rng, self.keep_fraction
        )
        min_side = self.codec_cfg.stride / 2
        boxes = [b for b in annotation.boxes if b.w >= min_side and b.h >= min_side]
        targets = encode_targets(boxes, image.width, image.height, self.codec_cfg)
        return image.to_tensor(), targets


def collate_pages(items: Sequence[Tuple[torch.Tensor, TargetSet]]) -> Tuple[torch.Tensor, List[TargetSet]]:
    return torch.stack([img for img, _ in items]), [t for _, t in items]


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    seconds: float
    eval: Optional[Dict[str, Any]] = None


class Trainer:
    """🏋️ Epoch loop around ``train_step``"""

    def __init__(
        self,
        model: HRCenterNet,
        settings: TrainSettings,
        weights: LossWeights = LossWeights(),
    ):
        self.model = model.to(settings.device)
        self.settings = settings
        self.weights = weights
        self.optimizer = make_optimizer(model, settings.lr)
        self.step = 0
        self.history: List[EpochRecord] = []

    def fit(
        self,
        dataset: PageDataset,
        on_epoch_end: Optional[Callable[[int, HRCenterNet], Dict[str, Any]]] = None,
    ) -> List[EpochRecord]:
        generator = torch.Generator().manual_seed(self.settings.seed)
        loader = DataLoader(
            dataset,
            batch_size=self.settings.batch_size,
            shuffle=True,
            collate_fn=collate_pages,
            generator=generator,
            num_workers=self.settings.num_workers,
        )
        for epoch in range(self.settings.epochs):
            dataset.set_epoch(epoch)
            started = time.perf_counter()
            reports = []
            for images, targets in loader:
                reports.append(
                    train_step_tensors(
                        self.model, images, targets, self.optimizer, self.weights, self.step
                    )
                )
                self.step += 1
            epoch_report = merge_reports(reports)
            record = EpochRecord(epoch, epoch_report.total, time.perf_counter() - started)
            if on_epoch_end is not None:
                record.eval = on_epoch_end(epoch, self.model)
            self.history.append(record)
            logger.info(
                "epoch %d/%d loss %.4f (L_h %.4f, L_s %.4f, L_off %.4f) in %.1fs",
                epoch + 1, self.settings.epochs, epoch_report.total, epoch_report.l_h,
                epoch_report.l_s, epoch_report.l_offset, record.seconds,
            )
        self.model.eval()
        return self.history
