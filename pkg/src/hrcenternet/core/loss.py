"""
Composite training objective with analytic gradients.

    total = gamma_h * L_h + gamma_s * L_s + gamma_offset * L_offset

L_h is the penalty-reduced focal loss on the heatmap, L_s and L_offset are masked
L1 losses. All three are normalized by the number of objects on the page (at
least 1). Values are evaluated in float64; the gradients returned here are the
ones the trainer backpropagates.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, NamedTuple, Tuple, Union

import numpy as np

from .codec import TargetSet
from .errors import ConfigError, ShapeError
from .grid import TensorGrid

EPS = 1e-7

GridLike = Union[TensorGrid, np.ndarray]


@dataclass(frozen=True)
class LossWeights:
    gamma_h: float = 1.0
    gamma_s: float = 5.0
    gamma_offset: float = 10.0
    alpha: float = 2.0
    beta: float = 4.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value <= 0:
                raise ConfigError(f"loss weight {name} must be positive, got {value}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossWeights":
        known = {k: float(v) for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class LossReport:
    l_h: float
    l_s: float
    l_offset: float
    total: float
    n_objects: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class LossTerm(NamedTuple):
    value: float
    grad: TensorGrid


def _as_f64(x: GridLike) -> np.ndarray:
    arr = x.data if isinstance(x, TensorGrid) else np.asarray(x)
    return arr.astype(np.float64, copy=False)


def _check_dims(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: prediction shape {a.shape} != target shape {b.shape}")


def focal_terms(
    pred: np.ndarray, target: np.ndarray, n: int, w: LossWeights
) -> Tuple[float, np.ndarray]:
    """Heatmap focal loss value and d(value)/d(pred) on float64 arrays"""
    _check_dims("heatmap_focal_loss", pred, target)
    denom = float(max(n, 1))
    p = np.clip(pred, EPS, 1.0 - EPS)
    inside = (pred > EPS) & (pred < 1.0 - EPS)
    pos = target == 1.0
    a, b = w.alpha, w.beta

    log_p = np.log(p)
    log_1mp = np.log1p(-p)
    one_m_p = 1.0 - p
    neg_weight = (1.0 - target) ** b

    pos_val = one_m_p**a * log_p
    neg_val = neg_weight * p**a * log_1mp
    value = -float(np.sum(np.where(pos, pos_val, neg_val))) / denom

    pos_grad = -a * one_m_p ** (a - 1) * log_p + one_m_p**a / p
    neg_grad = neg_weight * (a * p ** (a - 1) * log_1mp - p**a / one_m_p)
    grad = -np.where(pos, pos_grad, neg_grad) / denom
    grad = np.where(inside, grad, 0.0)
    return value, grad


def masked_l1_terms(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray, n: int, name: str = "l1"
) -> Tuple[float, np.ndarray]:
    """Masked L1 value and subgradient on float64 arrays"""
    _check_dims(name, pred, target)
    if mask.shape[-2:] != pred.shape[-2:]:
        raise ShapeError(f"{name}: mask shape {mask.shape} does not match {pred.shape}")
    denom = float(max(n, 1))
    on = np.broadcast_to(mask.reshape((-1,) + mask.shape[-2:])[:1] > 0.5, pred.shape)
    diff = pred - target
    value = float(np.sum(np.abs(diff), where=on)) / denom
    grad = np.where(on, np.sign(diff), 0.0) / denom
    return value, grad


def heatmap_focal_loss(
    pred: GridLike, target: GridLike, n: int, w: LossWeights = LossWeights()
) -> LossTerm:
    value, grad = focal_terms(_as_f64(pred), _as_f64(target), n, w)
    return LossTerm(value, TensorGrid(grad))


def size_loss(
    pred_size: GridLike, target_size: GridLike, mask: GridLike, n: int
) -> LossTerm:
    value, grad = masked_l1_terms(
        _as_f64(pred_size), _as_f64(target_size), _as_f64(mask), n, "size_loss"
    )
    return LossTerm(value, TensorGrid(grad))


def offset_loss(
    pred_off: GridLike, target_off: GridLike, mask: GridLike, n: int
) -> LossTerm:
    value, grad = masked_l1_terms(
        _as_f64(pred_off), _as_f64(target_off), _as_f64(mask), n, "offset_loss"
    )
    return LossTerm(value, TensorGrid(grad))


def total_terms(
    pred: np.ndarray, targets: TargetSet, w: LossWeights
) -> Tuple[LossReport, np.ndarray]:
    """Full objective on a stacked 5xHxW prediction (heatmap, h, w, off_x, off_y).

    Returns the report and a float64 gradient of the same shape as ``pred``.
    """
    expected = (5, targets.out_h, targets.out_w)
    if pred.shape != expected:
        raise ShapeError(f"prediction shape {pred.shape} != expected {expected}")
    n = targets.n_objects
    mask = _as_f64(targets.mask)
    l_h, g_h = focal_terms(pred[0:1], _as_f64(targets.heatmap), n, w)
    l_s, g_s = masked_l1_terms(pred[1:3], _as_f64(targets.size_map), mask, n, "size_loss")
    l_o, g_o = masked_l1_terms(
        pred[3:5], _as_f64(targets.offset_map), mask, n, "offset_loss"
    )
    total = w.gamma_h * l_h + w.gamma_s * l_s + w.gamma_offset * l_o
    grad = np.concatenate(
        [w.gamma_h * g_h, w.gamma_s * g_s, w.gamma_offset * g_o], axis=0
    )
    return LossReport(l_h, l_s, l_o, total, n), grad


def total_loss(
    pred: Any, targets: TargetSet, w: LossWeights = LossWeights()
) -> Tuple[LossReport, TensorGrid]:
    """Objective for one page; ``pred`` is a NetOutput (or anything with .stacked())"""
    stacked = pred.stacked() if hasattr(pred, "stacked") else _as_f64(pred)
    report, grad = total_terms(np.asarray(stacked, dtype=np.float64), targets, w)
    return report, TensorGrid(grad)
