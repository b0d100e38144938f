"""Deterministic low-level raster operations.

Polarity convention used throughout the package: in a binary document image
0 is black foreground (text, tables, figures) and 1 is white background.
All operations here are pure functions; identical inputs give bit-identical
outputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .validation import as_raster, check_binary, check_structuring_element

__all__ = [
    "LUMA_WEIGHTS",
    "to_grayscale",
    "otsu_binarize",
    "morph_open",
    "morph_dilate",
    "resize_nearest",
    "pad_to_square",
    "load_image",
]

#: ITU-R BT.601 luma weights for RGB -> gray.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

#: Histogram resolution for Otsu thresholding: 256 uniform bins over [0, 1],
#: matching 8-bit scans.
_OTSU_LEVELS = 256


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Collapse an RGB raster to single-channel luma; identity on gray input."""
    arr = as_raster(img)
    if arr.ndim == 2:
        return arr.copy()
    r, g, b = LUMA_WEIGHTS
    return arr[:, :, 0] * r + arr[:, :, 1] * g + arr[:, :, 2] * b


def otsu_binarize(img: np.ndarray) -> tuple[np.ndarray, bool]:
    """Binarize a grayscale image with Otsu's method.

    The threshold maximizes between-class variance over a 256-bin histogram;
    ties are broken toward the smallest threshold so results are
    deterministic. Pixels at or below the threshold become 0 (foreground),
    the rest become 1 (background).

    Returns ``(binary, empty_foreground)``. A constant image has no
    separable classes; it maps to all-background with the flag set, so blank
    pages flow through the pipeline instead of erroring.
    """
    arr = as_raster(img)
    if arr.ndim != 2:
        raise ValueError("otsu_binarize expects a single-channel image")

    levels = np.rint(arr * (_OTSU_LEVELS - 1)).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=_OTSU_LEVELS).astype(np.float64)

    if np.count_nonzero(hist) < 2:
        return np.ones(arr.shape, dtype=np.uint8), True

    # Between-class variance for every candidate threshold t: pixels with
    # level <= t form class 0, the rest class 1.
    weight0 = np.cumsum(hist)
    total = weight0[-1]
    weight1 = total - weight0
    cum_mean = np.cumsum(hist * np.arange(_OTSU_LEVELS))
    grand_mean = cum_mean[-1]

    with np.errstate(divide="ignore", invalid="ignore"):
        mean0 = cum_mean / weight0
        mean1 = (grand_mean - cum_mean) / weight1
        variance = weight0 * weight1 * (mean0 - mean1) ** 2
    variance = np.nan_to_num(variance, nan=-1.0)

    threshold = int(np.argmax(variance))  # first max = smallest threshold
    binary = (levels > threshold).astype(np.uint8)
    return binary, False


def morph_open(img: np.ndarray, se: tuple[int, int]) -> np.ndarray:
    """Morphological opening of the black foreground set.

    Erosion followed by dilation under a kx-by-ky rectangle; foreground
    specks smaller than the structuring element disappear. Pixels outside
    the image border count as background.
    """
    kx, ky = check_structuring_element(se)
    binary = check_binary(img)
    fg = binary == 0
    eroded = ndimage.minimum_filter(fg, size=(ky, kx), mode="constant", cval=False)
    opened = ndimage.maximum_filter(eroded, size=(ky, kx), mode="constant", cval=False)
    return np.where(opened, 0, 1).astype(np.uint8)


def morph_dilate(img: np.ndarray, se: tuple[int, int]) -> np.ndarray:
    """Grow the black foreground set by a kx-by-ky rectangular footprint."""
    kx, ky = check_structuring_element(se)
    binary = check_binary(img)
    fg = binary == 0
    dilated = ndimage.maximum_filter(fg, size=(ky, kx), mode="constant", cval=False)
    return np.where(dilated, 0, 1).astype(np.uint8)


def resize_nearest(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbor resize; never interpolates, so binary images stay
    binary and label fields never gain labels.

    Output pixel (i, j) samples input pixel (floor(i*H/out_h),
    floor(j*W/out_w)).
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {(out_w, out_h)}")
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError("resize_nearest expects a 2-D array")
    in_h, in_w = arr.shape
    rows = (np.arange(out_h, dtype=np.int64) * in_h) // out_h
    cols = (np.arange(out_w, dtype=np.int64) * in_w) // out_w
    return arr[np.ix_(rows, cols)].copy()


def pad_to_square(img: np.ndarray, fill) -> np.ndarray:
    """Pad the bottom/right of a 2-D array until it is square."""
    arr = np.asarray(img)
    h, w = arr.shape
    side = max(h, w)
    if h == side and w == side:
        return arr.copy()
    out = np.full((side, side), fill, dtype=arr.dtype)
    out[:h, :w] = arr
    return out


def load_image(path: str | Path, grayscale: bool = True) -> np.ndarray:
    """Read a PNG or binary PGM/PPM file into a [0, 1] raster.

    With ``grayscale=True`` (the default) the result is single-channel;
    otherwise color files come back as ``(H, W, 3)``.
    """
    with Image.open(path) as im:
        if grayscale:
            im = im.convert("L")
        elif im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64)
    return arr / 255.0
