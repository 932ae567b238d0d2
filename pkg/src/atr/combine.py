"""Turning predicted structure outputs into per-label confidence maps.

A normalized mask is stretched onto its predicted box (bilinear sampling at
pixel centres), gated by the visibility flag, and the resulting foreground maps
are used to pick reliable seeds for a colour model that scores background.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .imaging import bilinear_weights

VISIBILITY_THRESHOLD = 0.5
SEED_WINDOW = 10
HIST_BINS = 16


@dataclass(frozen=True)
class ConfidenceMap:
    label: int
    values: np.ndarray  # (H, W) float64 in [0, 1]
    degenerate: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class SeedSet:
    foreground: np.ndarray  # (H, W) bool
    background: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if np.any(self.foreground & self.background):
            raise ValueError("foreground and background seeds overlap")


def _axis_weights(n_pixels: int, start: float, extent: float, n_grid: int) -> tuple[np.ndarray, np.ndarray]:
    """Sampling matrix for the pixels whose centre lies inside [start, start + extent)."""
    centres = np.arange(n_pixels) + 0.5
    inside = (centres >= start) & (centres < start + extent)
    pos = (centres[inside] - start) * (n_grid / extent) - 0.5
    return inside, bilinear_weights(n_grid, pos)


def morph_mask(mask: np.ndarray, shape, dims: tuple[int, int], label: int = 0) -> ConfidenceMap:
    """Place a normalized ``(r_h, r_w)`` mask inside the box of ``shape`` on an ``(H, W)`` canvas.

    ``shape`` is ``(b_x, b_y, b_w, b_h, v)`` in pixels. Pixel column ``x`` is
    covered when its centre ``x + 0.5`` falls in ``[b_x, b_x + b_w)``, rows
    likewise; everything outside the frame is discarded.
    """
    H, W = dims
    bx, by, bw, bh, v = (float(s) for s in shape)
    out = np.zeros((H, W))
    if v < VISIBILITY_THRESHOLD:
        return ConfidenceMap(label, out)
    if not (bw > 0 and bh > 0):
        return ConfidenceMap(label, out, degenerate=True)
    mask = np.asarray(mask, dtype=np.float64)
    cols, Wx = _axis_weights(W, bx, bw, mask.shape[1])
    rows, Wy = _axis_weights(H, by, bh, mask.shape[0])
    if cols.any() and rows.any():
        out[np.ix_(rows, cols)] = np.clip(Wy @ mask @ Wx.T, 0.0, 1.0)
    return ConfidenceMap(label, out)


def foreground_confidence(maps) -> ConfidenceMap:
    """Pixel-wise maximum over the foreground label maps."""
    maps = list(maps)
    if not maps:
        raise ValueError("no confidence maps given")
    values = np.asarray(maps[0].values if isinstance(maps[0], ConfidenceMap) else maps[0], dtype=np.float64)
    for m in maps[1:]:
        other = m.values if isinstance(m, ConfidenceMap) else m
        if other.shape != values.shape:
            raise ValueError("confidence maps differ in size")
        values = np.maximum(values, other)
    return ConfidenceMap(-1, values)


def erode(mask: np.ndarray, size: int = SEED_WINDOW) -> np.ndarray:
    """Square erosion; the window of pixel p spans p - size//2 .. p + (size-1)//2.

    Pixels beyond the frame count as background, so foreground touching the
    border is eaten away there.
    """
    return ndimage.minimum_filter(np.asarray(mask, dtype=bool), size=size, mode="constant", cval=False)


def dilate(mask: np.ndarray, size: int = SEED_WINDOW) -> np.ndarray:
    """Square dilation with the same window as :func:`erode`.

    Out-of-frame pixels count as set here, which is what makes
    ``erode(m) == ~dilate(~m)`` hold exactly, borders included.
    """
    return ndimage.maximum_filter(np.asarray(mask, dtype=bool), size=size, mode="constant", cval=True)


def generate_seeds(c_f, size: int = SEED_WINDOW) -> SeedSet:
    values = c_f.values if isinstance(c_f, ConfidenceMap) else np.asarray(c_f)
    fg = values > 0.5
    fg_seeds = erode(fg, size)
    bg_seeds = dilate(~fg, size) & ~fg
    return SeedSet(fg_seeds, bg_seeds)


def _colour_bins(image: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    q = (np.asarray(image, dtype=np.int64) * bins) // 256
    return (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]


def background_confidence(image: np.ndarray, seeds: SeedSet, bins: int = HIST_BINS) -> ConfidenceMap:
    """Posterior of background under smoothed joint colour histograms of the two seed sets.

    ``c_0 = P_bg(colour) / (P_bg(colour) + P_fg(colour))`` with add-one
    smoothing over ``bins**3`` colour cells.
    """
    image = np.asarray(image)
    H, W = image.shape[:2]
    if not seeds.foreground.any():
        return ConfidenceMap(0, np.ones((H, W)))
    if not seeds.background.any():
        return ConfidenceMap(0, np.zeros((H, W)))
    cells = _colour_bins(image, bins)
    n = bins**3
    h_fg = np.bincount(cells[seeds.foreground], minlength=n).astype(np.float64)
    h_bg = np.bincount(cells[seeds.background], minlength=n).astype(np.float64)
    p_fg = (h_fg + 1.0) / (h_fg.sum() + n)
    p_bg = (h_bg + 1.0) / (h_bg.sum() + n)
    post = p_bg / (p_bg + p_fg)
    return ConfidenceMap(0, post[cells])


def save_confidence_map(cmap, path) -> None:
    """8-bit grayscale dump, value round(255 * c)."""
    values = cmap.values if isinstance(cmap, ConfidenceMap) else np.asarray(cmap)
    Image.fromarray(np.round(255.0 * np.clip(values, 0.0, 1.0)).astype(np.uint8)).save(Path(path))
