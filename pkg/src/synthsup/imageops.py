"""Plain-array image geometry: padding, bilinear resize, equalization, warps.

All functions take and return 2-D float arrays.  Resampling goes through
``scipy.ndimage.affine_transform`` with bilinear interpolation and zero
fill, using the pixel-center convention (output pixel o samples input
coordinate (o + 0.5) * scale - 0.5).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

EQUALIZE_BINS = 256


def _as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError("expected a non-empty 2-D array")
    return arr


def pad_to_square(img) -> np.ndarray:
    """Center the image on a zero square whose side is the larger dimension."""
    arr = _as_image(img)
    h, w = arr.shape
    side = max(h, w)
    out = np.zeros((side, side), dtype=arr.dtype)
    top = (side - h) // 2
    left = (side - w) // 2
    out[top:top + h, left:left + w] = arr
    return out


def resize_bilinear(img, size: int) -> np.ndarray:
    arr = _as_image(img)
    if size < 1:
        raise ValueError("size must be positive")
    scale = np.array([arr.shape[0] / size, arr.shape[1] / size])
    offset = 0.5 * scale - 0.5
    return ndimage.affine_transform(arr, np.diag(scale), offset=offset,
                                    output_shape=(size, size), order=1,
                                    mode="grid-constant", cval=0.0)


def equalize_histogram(img, bins: int = EQUALIZE_BINS) -> np.ndarray:
    """Histogram equalization over ``bins`` levels, output spanning [0, 1].

    A constant image (single occupied bin) is returned unchanged: there is
    no distribution to flatten.
    """
    arr = _as_image(img)
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return arr.copy()
    levels = np.minimum((arr - lo) / (hi - lo) * bins, bins - 1).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=bins)
    cdf = np.cumsum(hist) / arr.size
    cdf_min = cdf[np.nonzero(hist)[0][0]]
    if cdf_min >= 1.0:
        return arr.copy()
    return (cdf[levels] - cdf_min) / (1.0 - cdf_min)


def affine_warp(img, matrix, shift=(0.0, 0.0)) -> np.ndarray:
    """Warp about the image center: out[o] = in[c + M (o - c - shift)].

    ``matrix`` is a 2x2 (row, col) linear map, ``shift`` a (row, col)
    translation in output pixels (positive moves content down/right).
    Regions mapped from outside the frame come back zero.
    """
    arr = _as_image(img)
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (2, 2):
        raise ValueError("matrix must be 2x2")
    center = (np.array(arr.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - m @ (center + np.asarray(shift, dtype=np.float64))
    return ndimage.affine_transform(arr, m, offset=offset, order=1,
                                    mode="grid-constant", cval=0.0)
