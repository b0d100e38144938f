"""Input validation helpers shared across the package.

Array conventions used everywhere:

* raster images are float arrays in [0, 1], shaped ``(H, W)`` for a single
  channel or ``(H, W, 3)`` for RGB;
* binary document images are ``(H, W)`` arrays whose values are exactly
  0 (black foreground) or 1 (white background);
* label fields are ``(H, W)`` integer arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_raster",
    "check_binary",
    "check_structuring_element",
    "check_rect",
]


def as_raster(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Coerce `img` to a validated float64 raster in [0, 1].

    Accepts ``(H, W)``, ``(H, W, 1)`` (squeezed to 2-D) or ``(H, W, 3)``.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] != 3:
        raise ValueError(
            f"{name} must have 1 or 3 channels, got {arr.shape[2]}"
        )
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"{name} values must lie in [0, 1], got range "
            f"[{arr.min():g}, {arr.max():g}]"
        )
    return arr


def check_binary(img: np.ndarray, name: str = "binary image") -> np.ndarray:
    """Validate a {0, 1}-valued single-channel image; returns it as uint8."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    vals = np.unique(arr)
    if not np.isin(vals, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1, got {vals[:8]}")
    return arr.astype(np.uint8, copy=False)


def check_structuring_element(se: tuple[int, int]) -> tuple[int, int]:
    """Validate a rectangular structuring element given as (kx, ky)."""
    try:
        kx, ky = int(se[0]), int(se[1])
    except (TypeError, ValueError, IndexError):
        raise ValueError(f"structuring element must be a (kx, ky) pair, got {se!r}")
    if kx < 1 or ky < 1:
        raise ValueError(f"structuring element sides must be >= 1, got {(kx, ky)}")
    if kx % 2 == 0 or ky % 2 == 0:
        raise ValueError(f"structuring element sides must be odd, got {(kx, ky)}")
    return kx, ky


def check_rect(rect: tuple[int, int, int, int], height: int, width: int,
               name: str = "rect") -> tuple[int, int, int, int]:
    """Validate a half-open (top, left, bottom, right) rectangle in bounds."""
    try:
        top, left, bottom, right = (int(v) for v in rect)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be (top, left, bottom, right), got {rect!r}")
    if not (0 <= top < bottom <= height and 0 <= left < right <= width):
        raise ValueError(
            f"{name} {rect!r} out of bounds for {height}x{width} image"
        )
    return top, left, bottom, right
