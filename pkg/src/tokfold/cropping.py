"""Shape-adaptive image cropping.

An input image of arbitrary resolution is mapped onto a grid of square
tiles. The grid honors an area budget (total tile count) and a side cap
(tiles per row or column), so the pixel budget with the defaults is
36 * 224^2 ~ 1.8M pixels and the longest edge is 12 * 224 = 2688 pixels.
A thumbnail of the whole image can accompany the tiles.

Grid selection: the ideal grid ceil(h/tile) x ceil(w/tile) is used
whenever it fits the caps. Otherwise candidates never exceed the ideal
grid on either axis (upscaling an axis is wasted compute), and the
winner maximizes the covered-pixel ratio min(rows*cols*tile^2/(w*h), 1),
breaking ties by closest aspect, then by fewest tiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["CropConfig", "CropPlan", "plan_crop", "tile_image", "bilinear_resize", "stitch_tiles"]


@dataclass(frozen=True)
class CropConfig:
    tile_px: int = 224
    max_area: int = 36
    max_side: int = 12
    thumbnail: bool = True

    def __post_init__(self):
        if self.tile_px < 1:
            raise ValueError("tile_px must be positive")
        if self.max_side < 1 or self.max_area < 1:
            raise ValueError("max_side and max_area must be positive")
        if self.max_side > self.max_area:
            raise ValueError("max_side cannot exceed max_area")


@dataclass(frozen=True)
class CropPlan:
    """Chosen grid: rows x cols tiles over the image resized to scaled_w x scaled_h."""

    rows: int
    cols: int
    scaled_w: int
    scaled_h: int
    tiles: tuple[tuple[int, int], ...]  # grid coordinates, row-major
    has_thumbnail: bool

    @property
    def tile_count(self) -> int:
        return self.rows * self.cols


def plan_crop(width: int, height: int, cfg: CropConfig = CropConfig()) -> CropPlan:
    """Pick the tile grid for an image of the given pixel dimensions.

    Returns the ideal grid when admissible; otherwise searches all
    admissible grids no larger than the ideal one per axis and applies
    the covered-pixel score with aspect and tile-count tie-breaks.
    Deterministic for fixed inputs.
    """
    if width < 1 or height < 1:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    t = cfg.tile_px
    ideal_rows = math.ceil(height / t)
    ideal_cols = math.ceil(width / t)

    if (
        ideal_rows * ideal_cols <= cfg.max_area
        and ideal_rows <= cfg.max_side
        and ideal_cols <= cfg.max_side
    ):
        rows, cols = ideal_rows, ideal_cols
    else:
        area = float(width * height)
        log_hw = math.log(height / width)
        best_key = None
        rows = cols = 0
        for r in range(1, min(cfg.max_side, ideal_rows) + 1):
            for c in range(1, min(cfg.max_side, ideal_cols) + 1):
                if r * c > cfg.max_area:
                    continue
                score = min(r * c * t * t / area, 1.0)
                aspect_dev = abs(math.log(c / r) + log_hw)
                key = (-score, aspect_dev, r * c, r, c)
                if best_key is None or key < best_key:
                    best_key = key
                    rows, cols = r, c

    tiles = tuple((r, c) for r in range(rows) for c in range(cols))
    return CropPlan(
        rows=rows,
        cols=cols,
        scaled_w=cols * t,
        scaled_h=rows * t,
        tiles=tiles,
        has_thumbnail=cfg.thumbnail,
    )


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an [h, w] or [h, w, c] array.

    Corner alignment makes a same-size resize the exact identity and is
    reproducible across platforms (pure float64 arithmetic).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return bilinear_resize(img[:, :, None], out_h, out_w)[:, :, 0]
    if img.ndim != 3:
        raise ValueError(f"expected [h, w] or [h, w, c] image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("empty image")

    def axis_coords(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1:
            return np.full(1, (n_in - 1) / 2.0)
        return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))

    ys = axis_coords(h, out_h)
    xs = axis_coords(w, out_w)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    tl = img[y0[:, None], x0[None, :]]
    tr = img[y0[:, None], x1[None, :]]
    bl = img[y1[:, None], x0[None, :]]
    br = img[y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return top + (bot - top) * fy


def tile_image(
    img: np.ndarray, plan: CropPlan, cfg: CropConfig = CropConfig()
) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Resize the image to the plan's grid and cut it into tiles.

    Returns the row-major list of tile_px x tile_px tiles plus the
    thumbnail (whole image resized to one tile) when the plan carries one.
    Stitching the tiles back together reproduces the resized image
    bit-exactly.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    t = cfg.tile_px
    resized = bilinear_resize(img, plan.scaled_h, plan.scaled_w)
    tiles = [resized[r * t : (r + 1) * t, c * t : (c + 1) * t].copy() for r, c in plan.tiles]
    thumb = bilinear_resize(img, t, t) if plan.has_thumbnail else None
    return tiles, thumb


def stitch_tiles(tiles: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Reassemble row-major tiles into the full image (test/report helper)."""
    if len(tiles) != rows * cols:
        raise ValueError(f"expected {rows * cols} tiles, got {len(tiles)}")
    bands = [np.concatenate(tiles[r * cols : (r + 1) * cols], axis=1) for r in range(rows)]
    return np.concatenate(bands, axis=0)
