"""
💾 Checkpoint files.

Layout (all integers little-endian):

    magic      4 bytes  b"HRCN"
    version    u16
    -- payload --
    n_fields   u16
    fields     n_fields x (tag u8, count u8, count x u32)
    n_tensors  u32
    n_floats   u64
    blob       n_floats x float32, state_dict order, floating tensors only
    -- end payload --
    crc32      u32 over the payload

Field tags: 1 base_channels, 2 stage_block_counts (3 values), 3 blocks_per_branch,
4 stage1_bottlenecks, 5 input_channels, 6 head_channels.
"""

import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from .errors import ConfigMismatchError, FormatError, InputFileError
from .model import HRCenterNet, ModelConfig, count_parameters

logger = logging.getLogger(__name__)

MAGIC = b"HRCN"
VERSION = 1

FIELD_TAGS: Dict[int, str] = {
    1: "base_channels",
    2: "stage_block_counts",
    3: "blocks_per_branch",
    4: "stage1_bottlenecks",
    5: "input_channels",
    6: "head_channels",
}
TAG_OF = {name: tag for tag, name in FIELD_TAGS.items()}


def _float_entries(model: HRCenterNet) -> List[Tuple[str, torch.Tensor]]:
    return [(k, v) for k, v in model.state_dict().items() if v.is_floating_point()]


def _encode_config(cfg: ModelConfig) -> bytes:
    data = cfg.to_dict()
    out = [struct.pack("<H", len(FIELD_TAGS))]
    for tag, name in FIELD_TAGS.items():
        value = data[name]
        values = list(value) if isinstance(value, (list, tuple)) else [value]
        out.append(struct.pack("<BB", tag, len(values)))
        out.append(struct.pack(f"<{len(values)}I", *values))
    return b"".join(out)


def save_model(model: HRCenterNet, path: Union[str, Path]) -> Path:
    path = Path(path)
    entries = _float_entries(model)
    blob = np.concatenate(
        [v.detach().cpu().reshape(-1).numpy().astype("<f4") for _, v in entries]
    ) if entries else np.zeros(0, dtype="<f4")
    payload = b"".join([
        _encode_config(model.cfg),
        struct.pack("<IQ", len(entries), blob.size),
        blob.tobytes(),
    ])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    logger.info("saved checkpoint %s (%d floats)", path, blob.size)
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError(self.path, "truncated checkpoint")
        values = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return values


def read_checkpoint(path: Union[str, Path]) -> Tuple[ModelConfig, np.ndarray, int]:
    """Validate a checkpoint and return (config, float blob, tensor count)"""
    path = Path(path)
    if not path.exists():
        raise InputFileError(path, "checkpoint not found")
    raw = path.read_bytes()
    if len(raw) < 10:
        raise FormatError(path, "truncated checkpoint")
    if raw[:4] != MAGIC:
        raise FormatError(path, f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise FormatError(path, f"unsupported checkpoint version {version}")
    payload, (crc,) = raw[6:-4], struct.unpack("<I", raw[-4:])

    reader = _Reader(payload, path)
    (n_fields,) = reader.take("<H")
    fields: Dict[str, object] = {}
    for _ in range(n_fields):
        tag, count = reader.take("<BB")
        values = reader.take(f"<{count}I")
        name = FIELD_TAGS.get(tag)
        if name is None:
            raise FormatError(path, f"unknown config field tag {tag}")
        fields[name] = list(values) if name == "stage_block_counts" else values[0]
    n_tensors, n_floats = reader.take("<IQ")
    expected_end = reader.pos + 4 * n_floats
    if expected_end != len(payload):
        raise FormatError(
            path, f"parameter blob length mismatch: header says {n_floats} floats"
        )
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(path, "CRC32 mismatch, file is corrupted")
    blob = np.frombuffer(payload, dtype="<f4", count=n_floats, offset=reader.pos)
    return ModelConfig.from_dict(fields), blob.astype(np.float32), n_tensors


def load_model(
    path: Union[str, Path], expected: Optional[ModelConfig] = None
) -> HRCenterNet:
    """Rebuild a model from a checkpoint; refuse it if ``expected`` differs"""
    cfg, blob, n_tensors = read_checkpoint(path)
    if expected is not None and expected != cfg:
        raise ConfigMismatchError(
            f"{path}: checkpoint config {cfg.to_dict()} does not match requested {expected.to_dict()}"
        )
    with torch.random.fork_rng(devices=[]):
        model = HRCenterNet(cfg)
    entries = _float_entries(model)
    if len(entries) != n_tensors or sum(v.numel() for _, v in entries) != blob.size:
        raise FormatError(Path(path), "parameter layout does not match the stored config")
    state = model.state_dict()
    pos = 0
    for name, tensor in entries:
        n = tensor.numel()
        chunk = torch.from_numpy(blob[pos : pos + n].copy()).reshape(tensor.shape)
        state[name] = chunk.to(tensor.dtype)
        pos += n
    model.load_state_dict(state)
    model.eval()
    logger.info(
        "loaded %s: C=%d, %s parameters", path, cfg.base_channels, f"{count_parameters(model):,}"
    )
    return model
