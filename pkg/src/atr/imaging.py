"""Resampling helpers shared by mask normalisation, morphing and cropping."""
from __future__ import annotations

import numpy as np


def bilinear_weights(n_in: int, positions: np.ndarray) -> np.ndarray:
    """Interpolation matrix sampling a length-``n_in`` signal at ``positions``.

    Positions are in input index space (pixel centres at integers) and are
    clamped to ``[0, n_in - 1]``. Row ``i`` of the result holds the weights of
    output sample ``i``; every row sums to one.
    """
    pos = np.clip(np.asarray(positions, dtype=np.float64), 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    W = np.zeros((pos.size, n_in))
    rows = np.arange(pos.size)
    np.add.at(W, (rows, lo), 1.0 - frac)
    np.add.at(W, (rows, hi), frac)
    return W


def centre_positions(n_out: int, n_in: int) -> np.ndarray:
    """Input coordinates of the output pixel centres when ``n_in`` is stretched to ``n_out``."""
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_bilinear(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    Wy = bilinear_weights(grid.shape[0], centre_positions(height, grid.shape[0]))
    Wx = bilinear_weights(grid.shape[1], centre_positions(width, grid.shape[1]))
    return Wy @ grid @ Wx.T


def nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64), n_in - 1)


def resize_nearest(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-neighbour resize of the two leading axes."""
    rows = nearest_indices(height, arr.shape[0])
    cols = nearest_indices(width, arr.shape[1])
    return arr[rows][:, cols]
