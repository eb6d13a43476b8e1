"""
🖋️ Synthetic historical pages for desk-scale training.

Glyphs are procedural stroke compositions laid out in vertical columns read
top-down, right-to-left. Every glyph has one stroke spanning its full width and
one spanning its full height, so the annotated box is the tight extent of the
rendered ink. Noise and texture never move a box.
"""

import logging
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Any, Dict, Iterator, List, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .data import PageAnnotation
from .errors import ConfigError, EmptyPageError
from .geometry import BBox
from .grid import TensorGrid

logger = logging.getLogger(__name__)

PAGE_MARGIN = 4
INK_THRESHOLD = 0.5


class BackgroundTexture(Enum):
    PLAIN = "plain"
    PARCHMENT = "parchment"


@dataclass(frozen=True)
class SynthConfig:
    page_w: int = 128
    page_h: int = 128
    columns: Tuple[int, int] = (2, 5)
    chars_per_column: Tuple[int, int] = (4, 6)
    glyph_size: Tuple[float, float] = (12.0, 18.0)
    size_jitter: float = 0.15
    noise_level: float = 0.0
    background_texture: BackgroundTexture = BackgroundTexture.PLAIN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(int(v) for v in self.columns))
        object.__setattr__(self, "chars_per_column", tuple(int(v) for v in self.chars_per_column))
        object.__setattr__(self, "glyph_size", tuple(float(v) for v in self.glyph_size))
        object.__setattr__(self, "background_texture", BackgroundTexture(self.background_texture))
        if self.page_w <= 0 or self.page_h <= 0:
            raise ConfigError(f"page dims must be positive, got {self.page_w}x{self.page_h}")
        for name in ("columns", "chars_per_column", "glyph_size"):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise ConfigError(f"{name} range ({lo}, {hi}) is empty or non-positive")
        if not 0 <= self.size_jitter < 1:
            raise ConfigError(f"size_jitter must lie in [0, 1), got {self.size_jitter}")
        if not 0 <= self.noise_level <= 1:
            raise ConfigError(f"noise_level must lie in [0, 1], got {self.noise_level}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["columns"] = list(self.columns)
        data["chars_per_column"] = list(self.chars_per_column)
        data["glyph_size"] = list(self.glyph_size)
        data["background_texture"] = self.background_texture.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SynthConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        try:
            return cls(**known)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid synth config: {e}") from e


def _background(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.background_texture is BackgroundTexture.PLAIN:
        return np.ones((cfg.page_h, cfg.page_w), dtype=np.float64)
    coarse = (rng.random((8, 8)) * 255).astype(np.uint8)
    smooth = Image.fromarray(coarse, mode="L").resize((cfg.page_w, cfg.page_h), Image.BILINEAR)
    return 0.85 + 0.1 * np.asarray(smooth, dtype=np.float64) / 255.0


def _render_glyph(gw: int, gh: int, rng: np.random.Generator) -> np.ndarray:
    """Ink coverage in [0, 1] for one glyph cell; touches all four cell edges"""
    img = Image.new("L", (gw, gh), 255)
    draw = ImageDraw.Draw(img)
    ink = int(rng.integers(0, 60))
    width = max(1, int(round(min(gw, gh) / 8)))
    row = int(rng.integers(0, gh))
    col = int(rng.integers(0, gw))
    draw.line([(0, row), (gw - 1, row)], fill=ink, width=width)
    draw.line([(col, 0), (col, gh - 1)], fill=ink, width=width)
    for _ in range(int(rng.integers(1, 4))):
        x0, x1 = rng.integers(0, gw, size=2)
        y0, y1 = rng.integers(0, gh, size=2)
        draw.line([(int(x0), int(y0)), (int(x1), int(y1))], fill=ink, width=width)
    return np.asarray(img, dtype=np.float64) / 255.0


def _degrade(page: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.noise_level <= 0:
        return page
    speckle = rng.random(page.shape) < 0.02 * cfg.noise_level
    page = np.where(speckle, rng.uniform(0.0, 0.6, size=page.shape), page)
    page = page + rng.normal(0.0, 0.05 * cfg.noise_level, size=page.shape)
    img = Image.fromarray(np.round(np.clip(page, 0, 1) * 255).astype(np.uint8), mode="L")
    img = img.filter(ImageFilter.GaussianBlur(radius=1.5 * cfg.noise_level))
    return np.asarray(img, dtype=np.float64) / 255.0


def generate_page(
    cfg: SynthConfig, image_name: str = "page.png"
) -> Tuple[TensorGrid, PageAnnotation]:
    """Render one page and its character boxes; fully determined by ``cfg``"""
    rng = np.random.default_rng(cfg.seed)
    g_min, g_max = cfg.glyph_size
    cell = int(np.ceil(g_max * (1 + cfg.size_jitter)))
    col_gap = max(2, int(round(0.4 * g_max)))
    row_gap = max(2, int(round(0.2 * g_max)))
    pitch = cell + col_gap

    fit = (cfg.page_w - 2 * PAGE_MARGIN + col_gap) // pitch
    n_cols = min(int(rng.integers(cfg.columns[0], cfg.columns[1] + 1)), max(0, fit))
    page = _background(cfg, rng)
    boxes: List[BBox] = []

    for k in range(n_cols):
        axis = cfg.page_w - PAGE_MARGIN - cell / 2 - k * pitch
        n_chars = int(rng.integers(cfg.chars_per_column[0], cfg.chars_per_column[1] + 1))
        y = PAGE_MARGIN
        for _ in range(n_chars):
            size = rng.uniform(g_min, g_max)
            gw = max(3, int(round(size * (1 + rng.uniform(-cfg.size_jitter, cfg.size_jitter)))))
            gh = max(3, int(round(size * (1 + rng.uniform(-cfg.size_jitter, cfg.size_jitter)))))
            if y + gh > cfg.page_h - PAGE_MARGIN:
                break
            x = int(round(axis - gw / 2))
            glyph = _render_glyph(gw, gh, rng)
            region = page[y : y + gh, x : x + gw]
            page[y : y + gh, x : x + gw] = np.minimum(region, glyph)

            ys, xs = np.nonzero(glyph < INK_THRESHOLD)
            boxes.append(
                BBox.from_corners(x + xs.min(), y + ys.min(), x + xs.max() + 1, y + ys.max() + 1)
            )
            y += gh + row_gap

    if not boxes:
        raise EmptyPageError(f"config produced no glyphs on a {cfg.page_w}x{cfg.page_h} page")

    page = _degrade(page, cfg, rng)
    page = np.round(np.clip(page, 0.0, 1.0) * 255.0) / 255.0
    logger.debug("page seed=%d: %d glyphs in %d columns", cfg.seed, len(boxes), n_cols)
    return (
        TensorGrid(page[None]),
        PageAnnotation(image_name, cfg.page_w, cfg.page_h, tuple(boxes)),
    )


def generate_pages(cfg: SynthConfig, count: int) -> Iterator[Tuple[TensorGrid, PageAnnotation]]:
    """Pages with independent seeds cfg.seed, cfg.seed + 1, ..."""
    for i in range(count):
        yield generate_page(replace(cfg, seed=cfg.seed + i), image_name=f"p{i}.png")
