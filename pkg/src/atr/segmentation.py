"""Graph-based over-segmentation and super-pixel label smoothing.

The segmenter follows the classic Kruskal-order merging rule: two components
joined by an edge of weight ``w`` merge when ``w <= Int(C) + k / |C|`` holds on
both sides. Afterwards, components smaller than ``min_size`` are merged
greedily along the cheapest edges. Merging runs on the 8-connected grid, so a
component can end up linked only through a diagonal; those are split into
their 4-connected pieces and a second size pass (over 4-neighbour edges only)
restores the size bound without breaking 4-connectivity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

FH_K = 100.0
FH_MIN_SIZE = 20
FH_SIGMA = 0.8


@dataclass(frozen=True)
class SuperPixelMap:
    ids: np.ndarray  # (H, W) int64, 0..count-1 in raster order of first appearance

    @property
    def count(self) -> int:
        return int(self.ids.max()) + 1 if self.ids.size else 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.ids.ravel(), minlength=self.count)


@numba.njit(cache=True)
def _find(parent, a):
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        nxt = parent[a]
        parent[a] = root
        a = nxt
    return root


@numba.njit(cache=True)
def _union(parent, rank, size, a, b):
    if rank[a] < rank[b]:
        a, b = b, a
    parent[b] = a
    size[a] += size[b]
    if rank[a] == rank[b]:
        rank[a] += 1
    return a


@numba.njit(cache=True)
def _segment_graph(n, src, dst, w, order, k, min_size, four):
    parent = np.arange(n)
    rank = np.zeros(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    thresh = np.full(n, k)
    for e in order:
        a = _find(parent, src[e])
        b = _find(parent, dst[e])
        if a != b and w[e] <= thresh[a] and w[e] <= thresh[b]:
            r = _union(parent, rank, size, a, b)
            thresh[r] = w[e] + k / size[r]
    for e in order:
        a = _find(parent, src[e])
        b = _find(parent, dst[e])
        if a != b and (size[a] < min_size or size[b] < min_size):
            _union(parent, rank, size, a, b)
    first = np.empty(n, dtype=np.int64)
    for i in range(n):
        first[i] = _find(parent, i)

    # split into 4-connected pieces, then enforce the size bound over 4-edges
    parent = np.arange(n)
    rank[:] = 0
    size[:] = 1
    for e in order:
        if four[e] and first[src[e]] == first[dst[e]]:
            a = _find(parent, src[e])
            b = _find(parent, dst[e])
            if a != b:
                _union(parent, rank, size, a, b)
    for e in order:
        if four[e]:
            a = _find(parent, src[e])
            b = _find(parent, dst[e])
            if a != b and (size[a] < min_size or size[b] < min_size):
                _union(parent, rank, size, a, b)
    roots = np.empty(n, dtype=np.int64)
    for i in range(n):
        roots[i] = _find(parent, i)
    return roots


def grid_edges(H: int, W: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source/target pixel indices of the 8-connected grid and a 4-neighbour flag."""
    idx = np.arange(H * W).reshape(H, W)
    pairs = [
        (idx[:, :-1], idx[:, 1:], True),  # right
        (idx[:-1, :], idx[1:, :], True),  # down
        (idx[:-1, :-1], idx[1:, 1:], False),  # down-right
        (idx[1:, :-1], idx[:-1, 1:], False),  # up-right
    ]
    src = np.concatenate([a.ravel() for a, _, _ in pairs])
    dst = np.concatenate([b.ravel() for _, b, _ in pairs])
    four = np.concatenate([np.full(a.size, f) for a, _, f in pairs])
    return src, dst, four


def canonical_ids(labels: np.ndarray) -> np.ndarray:
    """Renumber arbitrary region labels 0..S-1 in raster order of first appearance."""
    flat = labels.ravel()
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse].reshape(labels.shape)


def felzenszwalb_segment(
    image: np.ndarray, k: float = FH_K, min_size: int = FH_MIN_SIZE, sigma: float = FH_SIGMA
) -> SuperPixelMap:
    """Over-segment an ``(H, W, C)`` or ``(H, W)`` image; intensities on the 0..255 scale."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    H, W = img.shape[:2]
    if H == 0 or W == 0:
        raise ValueError("empty image")
    if sigma > 0:
        img = np.stack(
            [ndimage.gaussian_filter(img[..., c], sigma, mode="nearest", truncate=4.0) for c in range(img.shape[2])],
            axis=-1,
        )
    flat = img.reshape(H * W, -1)
    src, dst, four = grid_edges(H, W)
    w = np.sqrt(np.sum((flat[src] - flat[dst]) ** 2, axis=1))
    order = np.argsort(w, kind="stable")
    roots = _segment_graph(H * W, src, dst, w, order, float(k), int(min_size), four)
    return SuperPixelMap(canonical_ids(roots.reshape(H, W)))


def _stack_maps(maps) -> np.ndarray:
    return np.stack([np.asarray(getattr(m, "values", m), dtype=np.float64) for m in maps])


def superpixel_smooth(maps, spmap: SuperPixelMap | np.ndarray) -> np.ndarray:
    """Give every super-pixel the label with the largest summed confidence inside it.

    ``maps`` holds K+1 maps with background first. Ties go to the lowest label.
    """
    C = _stack_maps(maps)
    ids = spmap.ids if isinstance(spmap, SuperPixelMap) else np.asarray(spmap)
    if C.shape[0] < 2:
        raise ValueError("need the background map plus at least one label map")
    if C.shape[1:] != ids.shape:
        raise ValueError("confidence maps and super-pixel map differ in size")
    flat_ids = ids.ravel()
    S = int(flat_ids.max()) + 1
    scores = np.stack([np.bincount(flat_ids, weights=c.ravel(), minlength=S) for c in C], axis=1)
    winners = np.argmax(scores, axis=1)
    return winners[ids].astype(np.uint8)


def pixel_argmax(maps) -> np.ndarray:
    """Per-pixel argmax of the K+1 maps, the variant without super-pixel refinement."""
    return np.argmax(_stack_maps(maps), axis=0).astype(np.uint8)
