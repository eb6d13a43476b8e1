"""
📜 Page data - annotations, page images, tensor files, cropping and dataset import.

Annotation files hold one page per line:

    {"image": "<path>", "width": W, "height": H, "boxes": [[x_min, y_min, x_max, y_max], ...]}

Boxes are stored in corner form and held in memory as center+size BBoxes.
"""

import json
import logging
import re
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import (
    AnnotationError,
    EmptyBoxError,
    FormatError,
    GeometryError,
    ImportFormatError,
    InputFileError,
    ShapeError,
)
from .geometry import BBox, clamp_to_image, intersection_area
from .grid import TensorGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CROP_KEEP_FRACTION = 0.25
CROP_MULTIPLE = 32
PAGE_BACKGROUND = 1.0

TENSOR_MAGIC = b"HRTG"
TENSOR_VERSION = 1
DTYPE_FLOAT32 = 1

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


@dataclass(frozen=True)
class PageAnnotation:
    image_path: str
    width: int
    height: int
    boxes: Tuple[BBox, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"page dims must be positive, got {self.width}x{self.height}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image": self.image_path,
            "width": self.width,
            "height": self.height,
            "boxes": [list(b.to_corners()) for b in self.boxes],
        }


# ---------------------------------------------------------------- annotations


def _parse_record(record: Any, path: Path, line_no: int) -> PageAnnotation:
    if not isinstance(record, dict):
        raise AnnotationError(path, "record must be a JSON object", line=line_no)
    try:
        image = str(record["image"])
        width = int(record["width"])
        height = int(record["height"])
        raw_boxes = record.get("boxes", [])
    except (KeyError, TypeError, ValueError) as e:
        raise AnnotationError(path, f"missing or invalid field: {e}", line=line_no) from e
    if width <= 0 or height <= 0:
        raise AnnotationError(path, f"page dims must be positive, got {width}x{height}", line=line_no, image=image)
    if not isinstance(raw_boxes, list):
        raise AnnotationError(
            path, f"boxes must be a list, got {type(raw_boxes).__name__}", line=line_no, image=image
        )

    boxes = []
    for k, raw in enumerate(raw_boxes):
        if not isinstance(raw, list):
            raise AnnotationError(path, f"box {k} must be a list of four numbers", line=line_no, image=image)
        try:
            x_min, y_min, x_max, y_max = (float(v) for v in raw)
            box = BBox.from_corners(x_min, y_min, x_max, y_max)
        except (TypeError, ValueError) as e:
            raise AnnotationError(path, f"box {k}: {e}", line=line_no, image=image) from e
        if x_min < 0 or y_min < 0 or x_max > width or y_max > height:
            raise AnnotationError(
                path, f"box {k} {list(raw)} lies outside the {width}x{height} page",
                line=line_no, image=image,
            )
        boxes.append(box)
    return PageAnnotation(image, width, height, tuple(boxes))


def load_annotations(path: PathLike) -> List[PageAnnotation]:
    path = Path(path)
    if not path.exists():
        raise InputFileError(path, "annotation file not found")
    pages = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise AnnotationError(path, f"invalid JSON: {e.msg}", line=line_no) from e
            pages.append(_parse_record(record, path, line_no))
    return pages


def save_annotations(pages: Iterable[PageAnnotation], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for page in pages:
            f.write(json.dumps(page.to_dict(), ensure_ascii=False) + "\n")
    return path


def resolve_image_path(page: PageAnnotation, annotation_file: PathLike) -> Path:
    """Relative image paths are taken relative to the annotation file's directory"""
    image = Path(page.image_path)
    return image if image.is_absolute() else Path(annotation_file).parent / image


# ---------------------------------------------------------------- images


def load_page_image(path: PathLike, channels: int = 1) -> TensorGrid:
    path = Path(path)
    if not path.exists():
        raise InputFileError(path, "page image not found")
    try:
        with Image.open(path) as img:
            img = img.convert("L" if channels == 1 else "RGB")
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except OSError as e:
        raise FormatError(path, f"unreadable image: {e}") from e
    return TensorGrid(arr[None] if channels == 1 else arr.transpose(2, 0, 1))


def grid_to_pil(image: TensorGrid) -> Image.Image:
    arr = np.round(np.clip(image.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if image.channels == 1:
        return Image.fromarray(arr[0], mode="L")
    return Image.fromarray(arr[:3].transpose(1, 2, 0), mode="RGB")


def save_page_image(image: TensorGrid, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid_to_pil(image).save(path, format="PNG")
    return path


# ---------------------------------------------------------------- tensor files


def write_tensor(path: PathLike, grid: TensorGrid) -> Path:
    """HRTG file: magic, u16 version, u8 dtype, u8 rank, u32 dims, f32 payload, crc32"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = grid.data.astype("<f4").tobytes()
    header = TENSOR_MAGIC + struct.pack("<HBB", TENSOR_VERSION, DTYPE_FLOAT32, 3)
    header += struct.pack("<3I", *grid.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    return path


def read_tensor(path: PathLike) -> TensorGrid:
    path = Path(path)
    if not path.exists():
        raise InputFileError(path, "tensor file not found")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise FormatError(path, "truncated tensor header")
    if raw[:4] != TENSOR_MAGIC:
        raise FormatError(path, f"bad magic {raw[:4]!r}, expected {TENSOR_MAGIC!r}")
    version, dtype, rank = struct.unpack_from("<HBB", raw, 4)
    if version != TENSOR_VERSION:
        raise FormatError(path, f"unsupported tensor version {version}")
    if dtype != DTYPE_FLOAT32:
        raise FormatError(path, f"unsupported dtype code {dtype}")
    if rank != 3:
        raise FormatError(path, f"expected rank 3, got {rank}")
    header_len = 8 + 4 * rank
    if len(raw) < header_len:
        raise FormatError(path, "truncated tensor header")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    n = int(np.prod(dims))
    expected = header_len + 4 * n + 4
    if len(raw) != expected:
        raise FormatError(
            path, f"length mismatch: dims {'x'.join(map(str, dims))} need {expected} bytes, file has {len(raw)}"
        )
    payload = raw[header_len : header_len + 4 * n]
    (crc,) = struct.unpack_from("<I", raw, header_len + 4 * n)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise FormatError(path, "CRC32 mismatch, file is corrupted")
    return TensorGrid(np.frombuffer(payload, dtype="<f4").reshape(dims))


# ---------------------------------------------------------------- cropping


def crop_annotation(
    annotation: PageAnnotation,
    x0: int,
    y0: int,
    crop_w: int,
    crop_h: int,
    keep_fraction: float = CROP_KEEP_FRACTION,
) -> PageAnnotation:
    window = BBox.from_corners(x0, y0, x0 + crop_w, y0 + crop_h)
    kept = []
    for box in annotation.boxes:
        if intersection_area(box, window) < keep_fraction * box.area:
            continue
        try:
            kept.append(clamp_to_image(box.translated(-x0, -y0), crop_w, crop_h))
        except EmptyBoxError:
            continue
    dropped = len(annotation.boxes) - len(kept)
    if dropped:
        logger.debug("crop at (%d, %d) dropped %d boxes", x0, y0, dropped)
    return replace(annotation, width=crop_w, height=crop_h, boxes=tuple(kept))


def random_crop(
    image: TensorGrid,
    annotation: PageAnnotation,
    crop_w: int,
    crop_h: int,
    rng: np.random.Generator,
    keep_fraction: float = CROP_KEEP_FRACTION,
) -> Tuple[TensorGrid, PageAnnotation]:
    """Crop a window, keeping boxes with at least ``keep_fraction`` of their area inside"""
    if crop_w > image.width or crop_h > image.height:
        raise ShapeError(
            f"crop {crop_w}x{crop_h} is larger than the {image.width}x{image.height} image"
        )
    if crop_w % CROP_MULTIPLE or crop_h % CROP_MULTIPLE or crop_w <= 0 or crop_h <= 0:
        raise ShapeError(f"crop {crop_w}x{crop_h} must be positive multiples of {CROP_MULTIPLE}")
    x0 = int(rng.integers(0, image.width - crop_w + 1))
    y0 = int(rng.integers(0, image.height - crop_h + 1))
    cropped = TensorGrid(image.data[:, y0 : y0 + crop_h, x0 : x0 + crop_w])
    return cropped, crop_annotation(annotation, x0, y0, crop_w, crop_h, keep_fraction)


def split_pages(
    pages: Sequence[Any], test_fraction: float = 0.1, seed: int = 0
) -> Tuple[List[Any], List[Any]]:
    """Deterministic train/test split; at least one test page when possible"""
    if not 0 <= test_fraction < 1:
        raise ValueError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    order = np.random.default_rng(seed).permutation(len(pages))
    n_test = int(round(len(pages) * test_fraction))
    if test_fraction > 0 and len(pages) > 1:
        n_test = max(1, n_test)
    test_idx = set(order[:n_test].tolist())
    train = [p for i, p in enumerate(pages) if i not in test_idx]
    test = [p for i, p in enumerate(pages) if i in test_idx]
    return train, test


# ---------------------------------------------------------------- MTHv2 import

_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


class Mthv2Importer:
    """Converts a directory of per-page character files into PageAnnotations.

    Each ``<stem>.txt`` holds one character per line whose last four numbers are
    ``x_min y_min x_max y_max`` (comma or whitespace separated, an optional
    leading label token is ignored). The page image ``<stem>.<ext>`` next to it
    provides the page dims.
    """

    def __init__(self, root: PathLike):
        self.root = Path(root)
        self.clamped_boxes = 0
        self.dropped_boxes = 0

    def _find_image(self, stem_path: Path) -> Optional[Path]:
        for suffix in IMAGE_SUFFIXES:
            for candidate in (stem_path.with_suffix(suffix), stem_path.with_suffix(suffix.upper())):
                if candidate.exists():
                    return candidate
        return None

    def _parse_file(self, path: Path) -> Optional[List[Tuple[float, ...]]]:
        rows = []
        for line in path.read_text(encoding="utf-8", errors="replace").splitlines():
            if not line.strip():
                continue
            numbers = _NUMBER.findall(line)
            if len(numbers) < 4:
                return None
            rows.append(tuple(float(v) for v in numbers[-4:]))
        return rows

    def import_pages(self) -> List[PageAnnotation]:
        if not self.root.is_dir():
            raise InputFileError(self.root, "annotation directory not found")
        pages = []
        for txt in sorted(self.root.glob("*.txt")):
            rows = self._parse_file(txt)
            image = self._find_image(txt)
            if rows is None or image is None:
                reason = "no page image next to it" if rows is not None else "unparseable line"
                raise ImportFormatError(txt, f"unknown annotation layout ({reason})")
            with Image.open(image) as img:
                width, height = img.size
            boxes = []
            for x_min, y_min, x_max, y_max in rows:
                try:
                    box = BBox.from_corners(x_min, y_min, x_max, y_max)
                    clamped = clamp_to_image(box, width, height)
                except (GeometryError, EmptyBoxError):
                    self.dropped_boxes += 1
                    logger.warning("%s: dropped degenerate box %s", txt.name, (x_min, y_min, x_max, y_max))
                    continue
                if clamped is not box:
                    self.clamped_boxes += 1
                    logger.warning("%s: clamped out-of-bounds box %s", txt.name, box.to_corners())
                boxes.append(clamped)
            pages.append(PageAnnotation(image.name, width, height, tuple(boxes)))
        logger.info(
            "imported %d pages from %s (%d boxes clamped, %d dropped)",
            len(pages), self.root, self.clamped_boxes, self.dropped_boxes,
        )
        return pages


def import_mthv2(char_annotation_dir: PathLike) -> List[PageAnnotation]:
    return Mthv2Importer(char_annotation_dir).import_pages()
