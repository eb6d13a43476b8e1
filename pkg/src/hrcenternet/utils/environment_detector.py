#!/usr/bin/env python3
"""
🔍 Environment Detector

Just the basics - which interpreter, which torch, which device. Recorded in
benchmark reports and run manifests so timings can be compared fairly.
"""

import os
import platform
import sys
from dataclasses import asdict, dataclass
from typing import Any, Dict

import torch


@dataclass
class SystemInfo:
    """Basic system information"""
    system: str
    machine: str
    python_version: str
    torch_version: str
    device: str
    cpu_count: int
    torch_threads: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class EnvironmentDetector:
    """Looks up the compute environment a run is executing in"""

    def __init__(self, device: str = "auto"):
        self.device = self.resolve_device(device)

    @staticmethod
    def resolve_device(device: str) -> str:
        """Map 'auto' to cuda when available, otherwise cpu"""
        if device == "auto":
            return "cuda" if torch.cuda.is_available() else "cpu"
        return device

    def get_system_info(self) -> SystemInfo:
        return SystemInfo(
            system=platform.system(),
            machine=platform.machine(),
            python_version=sys.version.split()[0],
            torch_version=torch.__version__,
            device=self._describe_device(),
            cpu_count=os.cpu_count() or 1,
            torch_threads=torch.get_num_threads(),
        )

    def _describe_device(self) -> str:
        if self.device.startswith("cuda") and torch.cuda.is_available():
            return f"{self.device} ({torch.cuda.get_device_name(0)})"
        return self.device
