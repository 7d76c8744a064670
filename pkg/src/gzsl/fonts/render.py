"""Deterministic glyph rasterisation.

A glyph is sampled from its bitmap on a 4x supersampled canvas (with slant
shear), grown or thinned by morphology, box-downsampled and thresholded, so
every output pixel is either exactly the font color or exactly the
background color.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .glyphs import DEFAULT_ATLAS, GlyphAtlas
from .styles import Style

SUPERSAMPLE = 4


def glyph_mask(bitmap: np.ndarray, height: int, style: Style) -> np.ndarray:
    """Boolean ink mask whose glyph box is ``height`` pixels tall.

    The returned canvas includes a margin for bold strokes and slant; the
    glyph box sits at ``margin`` rows/cols from the top-left (see
    :func:`glyph_layout`).
    """
    rows, cols = bitmap.shape
    width, extra, margin = glyph_layout(bitmap.shape, height, style)
    s = SUPERSAMPLE
    ch, cw = height + 2 * margin, width + extra + 2 * margin
    ys = (np.arange(ch * s) + 0.5) / s - margin
    xs = (np.arange(cw * s) + 0.5) / s - margin
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    shift = style.slant * (height - gy) + (extra if style.slant < 0 else 0)
    r = np.floor(gy * rows / height).astype(int)
    c = np.floor((gx - shift) * cols / width).astype(int)
    inside = (r >= 0) & (r < rows) & (c >= 0) & (c < cols)
    hi = np.zeros(gy.shape, dtype=bool)
    hi[inside] = bitmap[r[inside], c[inside]]

    radius = int(round(abs(style.weight) * height / rows * s))
    if radius:
        disk = _disk(radius)
        if style.weight > 0:
            hi = ndimage.binary_dilation(hi, structure=disk)
        else:
            hi = ndimage.binary_erosion(hi, structure=disk)
    cover = hi.reshape(ch, s, cw, s).mean(axis=(1, 3))
    mask = cover >= 0.5
    if style.outline:
        mask &= ~ndimage.binary_erosion(mask)
    return mask


def glyph_layout(grid_shape, height: int, style: Style) -> tuple[int, int, int]:
    """(glyph box width, slant overhang, canvas margin) in output pixels."""
    rows, cols = grid_shape
    width = max(1, int(round(height * cols / rows * style.aspect)))
    extra = int(math.ceil(abs(style.slant) * height))
    margin = int(math.ceil(max(style.weight, 0.0) * height / rows)) + 1
    return width, extra, margin


def _disk(radius: int) -> np.ndarray:
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return x * x + y * y <= radius * radius + radius


def render_glyph(letter: str, height: int, font_rgb, background_rgb, style: Style,
                 extent: int, atlas: GlyphAtlas = DEFAULT_ATLAS) -> np.ndarray:
    """``extent x extent x 3`` float image in [0, 1] with the glyph box centred."""
    bitmap = atlas.bitmap(letter)
    if height > extent:
        raise ValueError(f"glyph height {height} exceeds image extent {extent}")
    mask = glyph_mask(bitmap, height, style)
    width, extra, margin = glyph_layout(bitmap.shape, height, style)
    top = (extent - height) // 2 - margin
    left = (extent - (width + extra)) // 2 - margin

    canvas = np.zeros((extent, extent), dtype=bool)
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + mask.shape[0], extent), min(left + mask.shape[1], extent)
    canvas[y0:y1, x0:x1] = mask[y0 - top:y1 - top, x0 - left:x1 - left]

    fg = np.asarray(font_rgb, dtype=np.float32) / 255.0
    bg = np.asarray(background_rgb, dtype=np.float32) / 255.0
    img = np.empty((extent, extent, 3), dtype=np.float32)
    img[...] = bg
    img[canvas] = fg
    return img
