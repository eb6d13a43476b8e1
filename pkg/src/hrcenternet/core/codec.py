"""
🎯 Codec - boxes to center-keypoint maps and back.

Encoding splats one unnormalized elliptical Gaussian per character onto the
output grid (overlaps combined by max), and stores the normalized size and the
sub-pixel offset at the floored center pixel. Decoding picks local heatmap
peaks, inverts the size/offset arithmetic back to input pixels and runs greedy
box NMS.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, EmptyBoxError, EncodingError, ShapeError
from .geometry import BBox, clamp_to_image, corners_array, iou_matrix
from .grid import TensorGrid

logger = logging.getLogger(__name__)

MIN_SIGMA = 0.5
SATURATED = 1.0


@dataclass(frozen=True)
class CodecConfig:
    stride: int = 4
    sigma_divisor: float = 10.0
    conf_thresh: float = 0.3
    nms_iou: float = 0.5
    peak_window: int = 3
    top_k: int = 500

    def __post_init__(self):
        if self.stride <= 0:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if self.sigma_divisor <= 0:
            raise ConfigError(f"sigma_divisor must be positive, got {self.sigma_divisor}")
        if not 0 < self.conf_thresh < 1:
            raise ConfigError(f"conf_thresh must lie in (0, 1), got {self.conf_thresh}")
        if not 0 < self.nms_iou < 1:
            raise ConfigError(f"nms_iou must lie in (0, 1), got {self.nms_iou}")
        if self.peak_window <= 0 or self.peak_window % 2 == 0:
            raise ConfigError(f"peak_window must be a positive odd int, got {self.peak_window}")
        if self.top_k <= 0:
            raise ConfigError(f"top_k must be positive, got {self.top_k}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CodecConfig":
        defaults = cls()
        return cls(
            stride=int(data.get("stride", defaults.stride)),
            sigma_divisor=float(data.get("sigma_divisor", defaults.sigma_divisor)),
            conf_thresh=float(data.get("conf_thresh", defaults.conf_thresh)),
            nms_iou=float(data.get("nms_iou", defaults.nms_iou)),
            peak_window=int(data.get("peak_window", defaults.peak_window)),
            top_k=int(data.get("top_k", defaults.top_k)),
        )


@dataclass(frozen=True)
class TargetSet:
    """Ground-truth maps for one page.

    heatmap 1xHxW, size_map 2xHxW (height, width), offset_map 2xHxW (x, y),
    mask 1xHxW. ``collisions`` counts boxes whose center pixel was already taken.
    """

    heatmap: TensorGrid
    size_map: TensorGrid
    offset_map: TensorGrid
    mask: TensorGrid
    n_objects: int
    collisions: int = 0

    @property
    def out_h(self) -> int:
        return self.heatmap.height

    @property
    def out_w(self) -> int:
        return self.heatmap.width


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    def to_list(self) -> List[float]:
        return [*self.bbox.to_corners(), self.score]


def gaussian_value(
    x: float, y: float, px: float, py: float, sigma_x: float, sigma_y: float
) -> float:
    if sigma_x <= 0 or sigma_y <= 0:
        raise ValueError(f"sigmas must be positive, got ({sigma_x}, {sigma_y})")
    return math.exp(
        -((x - px) ** 2 / (2 * sigma_x**2) + (y - py) ** 2 / (2 * sigma_y**2))
    )


def output_dims(in_w: int, in_h: int, stride: int) -> Tuple[int, int]:
    if in_w <= 0 or in_h <= 0 or in_w % stride or in_h % stride:
        raise EncodingError(
            f"image dims {in_w}x{in_h} must be positive multiples of stride {stride}"
        )
    return in_w // stride, in_h // stride


def encode_targets(
    boxes: Sequence[BBox], in_w: int, in_h: int, cfg: CodecConfig = CodecConfig()
) -> TargetSet:
    """Build heatmap / size / offset / mask maps for one page."""
    out_w, out_h = output_dims(in_w, in_h, cfg.stride)
    heat = np.zeros((out_h, out_w), dtype=np.float64)
    size = np.zeros((2, out_h, out_w), dtype=np.float64)
    offset = np.zeros((2, out_h, out_w), dtype=np.float64)
    mask = np.zeros((out_h, out_w), dtype=np.float64)
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    collisions = 0
    encoded = 0

    for box in boxes:
        try:
            box = clamp_to_image(box, in_w, in_h)
        except EmptyBoxError as e:
            raise EncodingError(str(e)) from e
        w_out = box.w / cfg.stride
        h_out = box.h / cfg.stride
        if w_out < 0.5 or h_out < 0.5:
            raise EncodingError(
                f"box {box.to_corners()} is too small for stride {cfg.stride}"
            )
        px = box.cx / cfg.stride
        py = box.cy / cfg.stride
        ix = min(int(math.floor(px)), out_w - 1)
        iy = min(int(math.floor(py)), out_h - 1)

        sigma_x = max(w_out / cfg.sigma_divisor, MIN_SIGMA)
        sigma_y = max(h_out / cfg.sigma_divisor, MIN_SIGMA)
        gx = np.exp(-((xs - ix) ** 2) / (2 * sigma_x**2))
        gy = np.exp(-((ys - iy) ** 2) / (2 * sigma_y**2))
        np.maximum(heat, np.outer(gy, gx), out=heat)

        if mask[iy, ix]:
            collisions += 1
            logger.warning(
                "center collision at output pixel (%d, %d); later box overwrites size/offset",
                ix,
                iy,
            )
        else:
            encoded += 1
        mask[iy, ix] = 1.0
        size[0, iy, ix] = box.h / in_h
        size[1, iy, ix] = box.w / in_w
        offset[0, iy, ix] = px - ix
        offset[1, iy, ix] = py - iy

    return TargetSet(
        heatmap=TensorGrid(heat[None]),
        size_map=TensorGrid(size),
        offset_map=TensorGrid(offset),
        mask=TensorGrid(mask[None]),
        n_objects=encoded,
        collisions=collisions,
    )


def extract_peaks(
    heatmap: TensorGrid, cfg: CodecConfig = CodecConfig()
) -> List[Tuple[int, int, float]]:
    """Window local maxima at or above conf_thresh, best first.

    On a plateau only the lexicographically smallest (y, x) survives, except at
    saturated pixels: every pixel at exactly 1.0 is an encoded center and is kept.
    """
    heat = heatmap.channel(0).astype(np.float64)
    r = cfg.peak_window // 2
    padded = np.pad(heat, r, mode="constant", constant_values=-np.inf)
    windows = sliding_window_view(padded, (cfg.peak_window, cfg.peak_window))
    is_max = heat >= windows.max(axis=(-2, -1))
    candidate = is_max & (heat >= cfg.conf_thresh)

    keep = candidate.copy()
    padded_heat = np.pad(heat, r, mode="constant", constant_values=np.nan)
    padded_cand = np.pad(candidate, r, mode="constant", constant_values=False)
    h, w = heat.shape
    for dy in range(-r, 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx >= 0:
                break
            neighbor = padded_heat[r + dy : r + dy + h, r + dx : r + dx + w]
            neighbor_cand = padded_cand[r + dy : r + dy + h, r + dx : r + dx + w]
            keep &= ~(neighbor_cand & (neighbor == heat) & (heat < SATURATED))

    ys, xs = np.nonzero(keep)
    scores = heat[ys, xs]
    # descending score, ties by (y, x)
    order = np.lexsort((xs, ys, -scores))[: cfg.top_k]
    return [(int(xs[i]), int(ys[i]), float(scores[i])) for i in order]


def nms(dets: Sequence[Detection], iou_thresh: float) -> List[Detection]:
    """Greedy box NMS; keeps a detection iff IoU with every kept one is <= iou_thresh"""
    if not dets:
        return []
    ordered = sorted(dets, key=lambda d: -d.score)
    boxes = corners_array(d.bbox for d in ordered)
    overlaps = iou_matrix(boxes, boxes)
    kept: List[int] = []
    for i in range(len(ordered)):
        if all(overlaps[i, k] <= iou_thresh for k in kept):
            kept.append(i)
    return [ordered[i] for i in kept]


def decode_detections(
    out: Any, in_w: int, in_h: int, cfg: CodecConfig = CodecConfig()
) -> List[Detection]:
    """Turn one page's prediction maps into scored boxes in input pixels.

    ``out`` is anything with ``heatmap``, ``size`` and ``offset`` grids
    (a NetOutput, or a TargetSet's maps wrapped via ``maps_from_targets``).
    """
    heatmap, size_map, offset_map = out.heatmap, out.size, out.offset
    out_h, out_w = heatmap.height, heatmap.width
    for name, grid, channels in (("size", size_map, 2), ("offset", offset_map, 2)):
        if grid.shape != (channels, out_h, out_w):
            raise ShapeError(
                f"{name} map has shape {grid.shape}, expected {(channels, out_h, out_w)}"
            )
    scale_x = in_w / out_w
    scale_y = in_h / out_h

    dets: List[Detection] = []
    for x, y, score in extract_peaks(heatmap, cfg):
        cx = (x + float(offset_map.data[0, y, x])) * scale_x
        cy = (y + float(offset_map.data[1, y, x])) * scale_y
        h = float(size_map.data[0, y, x]) * in_h
        w = float(size_map.data[1, y, x]) * in_w
        if w <= 0 or h <= 0:
            continue
        try:
            box = clamp_to_image(BBox(cx, cy, w, h), in_w, in_h)
        except EmptyBoxError:
            continue
        dets.append(Detection(box, min(1.0, max(0.0, score))))
    return nms(dets, cfg.nms_iou)


@dataclass(frozen=True)
class MapView:
    heatmap: TensorGrid
    size: TensorGrid
    offset: TensorGrid


def maps_from_targets(targets: TargetSet) -> MapView:
    """Present encoded targets as prediction-shaped maps (for oracle decoding)"""
    return MapView(targets.heatmap, targets.size_map, targets.offset_map)
