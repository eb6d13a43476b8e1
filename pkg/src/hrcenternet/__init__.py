#!/usr/bin/env python3
"""
🏯 HRCenterNet - anchorless character detection for historical documents

This package provides:
- Center-keypoint target encoding and detection decoding
- The composite focal + L1 training loss with analytic gradients
- A high-resolution multi-branch network and its checkpoint format
- Synthetic vertical-script pages, evaluation, benchmarking and overlays

Installation:
    uv pip install -e ".[dev]"
"""

__version__ = "1.0.0"
__description__ = "🏯 Anchorless character detection for historical documents"

# Core imports for easy access
from .core.codec import CodecConfig, Detection, TargetSet, decode_detections, encode_targets
from .core.geometry import BBox, iou
from .core.grid import TensorGrid
from .core.loss import LossReport, LossWeights, total_loss
from .core.model import HRCenterNet, ModelConfig, NetOutput, build_model, forward
from .core.evaluation import detect

__all__ = [
    "BBox",
    "iou",
    "TensorGrid",
    "CodecConfig",
    "TargetSet",
    "Detection",
    "encode_targets",
    "decode_detections",
    "LossWeights",
    "LossReport",
    "total_loss",
    "ModelConfig",
    "NetOutput",
    "HRCenterNet",
    "build_model",
    "forward",
    "detect",
]


def get_version():
    """Get the current version"""
    return __version__
