"""Helpers shared by several test modules."""

import numpy as np
import torch
import torch.nn as nn

from hrcenternet.core.codec import CodecConfig, TargetSet, encode_targets
from hrcenternet.core.geometry import BBox, iou
from hrcenternet.core.model import ModelConfig

TOY = ModelConfig()
TINY = ModelConfig(
    base_channels=4, stage_block_counts=(1, 1, 1), blocks_per_branch=1, stage1_bottlenecks=1
)


def random_boxes(rng, page=128, count=1, min_size=8.0, max_size=40.0, stride=4, nms_iou=0.5):
    """Boxes fully inside the page whose centers floor to distinct output pixels
    and whose pairwise IoU stays at or below ``nms_iou``"""
    boxes = []
    while len(boxes) < count:
        w, h = rng.uniform(min_size, max_size, size=2)
        cx = rng.uniform(w / 2, page - w / 2)
        cy = rng.uniform(h / 2, page - h / 2)
        box = BBox(float(cx), float(cy), float(w), float(h))
        cell = (int(cx // stride), int(cy // stride))
        ok = all(
            max(abs(cell[0] - int(b.cx // stride)), abs(cell[1] - int(b.cy // stride))) >= 1
            and iou(box, b) <= nms_iou
            for b in boxes
        )
        if ok:
            boxes.append(box)
    return boxes


def stacked_targets(targets: TargetSet) -> np.ndarray:
    """Targets laid out like a head output: heatmap, h, w, off_x, off_y"""
    return np.concatenate(
        [targets.heatmap.data, targets.size_map.data, targets.offset_map.data], axis=0
    ).astype(np.float64)


class FixedMaps(nn.Module):
    """Stand-in network that returns the same 5-channel maps for any input"""

    def __init__(self, maps: np.ndarray):
        super().__init__()
        self.register_buffer("maps", torch.from_numpy(np.asarray(maps, dtype=np.float32)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.maps.unsqueeze(0)


def oracle_model(boxes, in_w=128, in_h=128, cfg: CodecConfig = CodecConfig()) -> FixedMaps:
    return FixedMaps(stacked_targets(encode_targets(boxes, in_w, in_h, cfg)))
