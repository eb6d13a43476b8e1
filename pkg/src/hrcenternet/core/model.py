"""
🧠 Parallel multi-resolution backbone with a shared sigmoid detection head.

Layout (C = base_channels):

    stem     two stride-2 3x3 convs              -> 1/4 resolution, 2C channels
    stage 1  bottlenecks (C -> 4C)               -> transition to [C, 2C]
    stage 2  modules over 2 branches             -> new branch 4C at 1/16
    stage 3  modules over 3 branches             -> new branch 8C at 1/32
    stage 4  modules over 4 branches, final fuse -> highest-resolution branch only
    head     1x1 conv C -> 5, sigmoid            -> heatmap, height, width, off_x, off_y

Branch i has C * 2**i channels at input / (4 * 2**i) resolution.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .grid import TensorGrid

logger = logging.getLogger(__name__)

NUM_BRANCHES = 4
OUTPUT_STRIDE = 4
INPUT_MULTIPLE = OUTPUT_STRIDE * 2 ** (NUM_BRANCHES - 1)
BN_MOMENTUM = 0.1
OUTPUT_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 8
    stage_block_counts: Tuple[int, int, int] = (1, 1, 1)
    blocks_per_branch: int = 2
    stage1_bottlenecks: int = 2
    input_channels: int = 1
    head_channels: int = 5

    def __post_init__(self):
        object.__setattr__(self, "stage_block_counts", tuple(int(v) for v in self.stage_block_counts))
        if self.base_channels <= 0:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")
        if len(self.stage_block_counts) != 3 or min(self.stage_block_counts) <= 0:
            raise ConfigError(
                f"stage_block_counts needs three positive counts, got {self.stage_block_counts}"
            )
        if self.blocks_per_branch <= 0 or self.stage1_bottlenecks <= 0:
            raise ConfigError("blocks_per_branch and stage1_bottlenecks must be positive")
        if self.input_channels not in (1, 3):
            raise ConfigError(f"input_channels must be 1 or 3, got {self.input_channels}")
        if self.head_channels != 5:
            raise ConfigError(f"head_channels is fixed at 5, got {self.head_channels}")

    def branch_channels(self) -> List[int]:
        return [self.base_channels * 2**i for i in range(NUM_BRANCHES)]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["stage_block_counts"] = list(self.stage_block_counts)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        defaults = cls()
        return cls(
            base_channels=int(data.get("base_channels", defaults.base_channels)),
            stage_block_counts=tuple(data.get("stage_block_counts", defaults.stage_block_counts)),
            blocks_per_branch=int(data.get("blocks_per_branch", defaults.blocks_per_branch)),
            stage1_bottlenecks=int(data.get("stage1_bottlenecks", defaults.stage1_bottlenecks)),
            input_channels=int(data.get("input_channels", defaults.input_channels)),
            head_channels=int(data.get("head_channels", defaults.head_channels)),
        )


PRESETS: Dict[str, ModelConfig] = {
    "toy": ModelConfig(),
    "paper-w32": ModelConfig(
        base_channels=32,
        stage_block_counts=(1, 4, 3),
        blocks_per_branch=4,
        stage1_bottlenecks=4,
    ),
}


@dataclass(frozen=True)
class NetOutput:
    """Prediction maps for one image, all values inside (0, 1)"""

    heatmap: TensorGrid
    size: TensorGrid
    offset: TensorGrid

    @classmethod
    def from_tensor(cls, t: torch.Tensor) -> "NetOutput":
        """Split a (5, h, w) or (1, 5, h, w) head output"""
        if t.dim() == 4:
            if t.shape[0] != 1:
                raise ShapeError(f"expected a single image, got batch of {t.shape[0]}")
            t = t[0]
        if t.dim() != 3 or t.shape[0] != 5:
            raise ShapeError(f"head output must have 5 channels, got shape {tuple(t.shape)}")
        arr = t.detach().cpu().float().clamp(OUTPUT_EPS, 1.0 - OUTPUT_EPS).numpy()
        return cls(TensorGrid(arr[0:1]), TensorGrid(arr[1:3]), TensorGrid(arr[3:5]))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.heatmap.data, self.size.data, self.offset.data], axis=0)


class BranchNorm(nn.BatchNorm2d):
    """Batch norm that falls back to running statistics when a training batch
    carries a single value per channel (batch 1 on a 1x1 deepest branch)."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training and x.shape[0] * x.shape[2] * x.shape[3] == 1:
            return F.batch_norm(
                x, self.running_mean, self.running_var, self.weight, self.bias,
                False, 0.0, self.eps,
            )
        return super().forward(x)


def conv3x3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1, bias=False)


def conv1x1(in_ch: int, out_ch: int) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=1, bias=False)


def norm(ch: int) -> BranchNorm:
    return BranchNorm(ch, momentum=BN_MOMENTUM)


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.bn1 = norm(channels)
        self.conv2 = conv3x3(channels, channels)
        self.bn2 = norm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + x)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, planes: int):
        super().__init__()
        out_ch = planes * self.expansion
        self.conv1 = conv1x1(in_ch, planes)
        self.bn1 = norm(planes)
        self.conv2 = conv3x3(planes, planes)
        self.bn2 = norm(planes)
        self.conv3 = conv1x1(planes, out_ch)
        self.bn3 = norm(out_ch)
        self.downsample: Optional[nn.Module] = None
        if in_ch != out_ch:
            self.downsample = nn.Sequential(conv1x1(in_ch, out_ch), norm(out_ch))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + residual)


class MultiResolutionModule(nn.Module):
    """Parallel basic-block branches followed by an all-to-all fusion"""

    def __init__(self, widths: List[int], blocks: int, multi_scale_output: bool = True):
        super().__init__()
        self.widths = list(widths)
        self.branches = nn.ModuleList(
            nn.Sequential(*[BasicBlock(w) for _ in range(blocks)]) for w in widths
        )
        n_out = len(widths) if multi_scale_output else 1
        self.fuse_layers = nn.ModuleList()
        for i in range(n_out):
            row = nn.ModuleList()
            for j in range(len(widths)):
                if j > i:
                    row.append(
                        nn.Sequential(
                            conv1x1(widths[j], widths[i]),
                            norm(widths[i]),
                            nn.Upsample(scale_factor=2 ** (j - i), mode="nearest"),
                        )
                    )
                elif j == i:
                    row.append(nn.Identity())
                else:
                    steps: List[nn.Module] = []
                    for k in range(i - j):
                        last = k == i - j - 1
                        out_ch = widths[i] if last else widths[j]
                        steps += [conv3x3(widths[j], out_ch, stride=2), norm(out_ch)]
                        if not last:
                            steps.append(nn.ReLU())
                    row.append(nn.Sequential(*steps))
            self.fuse_layers.append(row)

    def forward(self, xs: List[torch.Tensor]) -> List[torch.Tensor]:
        xs = [branch(x) for branch, x in zip(self.branches, xs)]
        fused = []
        for row in self.fuse_layers:
            total = row[0](xs[0])
            for j in range(1, len(xs)):
                total = total + row[j](xs[j])
            fused.append(F.relu(total))
        return fused


class HRCenterNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        widths = cfg.branch_channels()
        stem_ch = 2 * c

        self.stem = nn.Sequential(
            conv3x3(cfg.input_channels, stem_ch, stride=2), norm(stem_ch), nn.ReLU(),
            conv3x3(stem_ch, stem_ch, stride=2), norm(stem_ch), nn.ReLU(),
        )
        layer1: List[nn.Module] = [Bottleneck(stem_ch, c)]
        layer1 += [Bottleneck(c * Bottleneck.expansion, c) for _ in range(cfg.stage1_bottlenecks - 1)]
        self.layer1 = nn.Sequential(*layer1)

        l1_out = c * Bottleneck.expansion
        self.transition1 = nn.ModuleList([
            nn.Sequential(conv3x3(l1_out, widths[0]), norm(widths[0]), nn.ReLU()),
            nn.Sequential(conv3x3(l1_out, widths[1], stride=2), norm(widths[1]), nn.ReLU()),
        ])

        self.stages = nn.ModuleList()
        self.transitions = nn.ModuleList()
        for s, n_modules in enumerate(cfg.stage_block_counts):
            n_branches = s + 2
            final_stage = n_branches == NUM_BRANCHES
            modules = [
                MultiResolutionModule(
                    widths[:n_branches],
                    cfg.blocks_per_branch,
                    multi_scale_output=not (final_stage and m == n_modules - 1),
                )
                for m in range(n_modules)
            ]
            self.stages.append(nn.Sequential(*modules))
            if not final_stage:
                self.transitions.append(
                    nn.Sequential(
                        conv3x3(widths[n_branches - 1], widths[n_branches], stride=2),
                        norm(widths[n_branches]),
                        nn.ReLU(),
                    )
                )

        self.head = nn.Conv2d(widths[0], cfg.head_channels, kernel_size=1, bias=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % INPUT_MULTIPLE or w % INPUT_MULTIPLE:
            raise ShapeError(f"input {h}x{w} must be divisible by {INPUT_MULTIPLE}")
        x = self.layer1(self.stem(x))
        xs = [t(x) for t in self.transition1]
        for s, stage in enumerate(self.stages):
            for module in stage:
                xs = module(xs)
            if s < len(self.transitions):
                xs = xs + [self.transitions[s](xs[-1])]
        return torch.sigmoid(self.head(xs[0]))


def init_weights(module: nn.Module) -> None:
    """Fan-in scaled Gaussian weights, zero biases, unit norm scales"""
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> HRCenterNet:
    """Deterministically build and initialize a model for ``seed``"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = HRCenterNet(cfg)
        model.apply(init_weights)
    model.eval()
    logger.info(
        "built model C=%d blocks=%s: %s parameters",
        cfg.base_channels, cfg.stage_block_counts, f"{count_parameters(model):,}",
    )
    return model


def image_batch(image: TensorGrid, device: Optional[torch.device] = None) -> torch.Tensor:
    t = image.to_tensor().unsqueeze(0)
    return t.to(device) if device is not None else t


def forward(model: HRCenterNet, image: TensorGrid) -> NetOutput:
    """Run one image through the network without tracking gradients"""
    if image.channels != model.cfg.input_channels:
        raise ShapeError(
            f"image has {image.channels} channels, model expects {model.cfg.input_channels}"
        )
    if image.height % INPUT_MULTIPLE or image.width % INPUT_MULTIPLE:
        raise ShapeError(
            f"input {image.height}x{image.width} must be divisible by {INPUT_MULTIPLE}"
        )
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(image_batch(image, device).to(dtype))
    return NetOutput.from_tensor(out)
