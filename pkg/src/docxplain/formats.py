"""On-disk formats: binary mask/attribution files and PNG visualizations.

Mask files ("DXSM"): little-endian header of magic, u32 width, height,
n_bg, n_fg, followed by width*height u32 labels row-major.

Attribution files ("DXAM"): little-endian header of magic, u32 width,
height, u8 mode code, u32 target class, followed by width*height float32
values row-major. Values are computed in double precision but stored as
float32.

All writes go through a temp-file-then-rename so readers never observe a
partial file.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .attribution import (
    MODE_FG,
    MODE_FG_BG,
    MODE_OCCLUSION,
    MODE_RANDOM,
    AttributionMap,
)
from .segmentation import SegmentationMask

__all__ = [
    "MASK_MAGIC",
    "ATTR_MAGIC",
    "write_mask",
    "read_mask",
    "write_attribution",
    "read_attribution",
    "mask_to_png",
    "heatmap_png",
    "atomic_write_bytes",
]

MASK_MAGIC = b"DXSM"
ATTR_MAGIC = b"DXAM"

_MODE_CODES = {MODE_FG: 0, MODE_FG_BG: 1, MODE_OCCLUSION: 2, MODE_RANDOM: 3}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}


def atomic_write_bytes(path, data: bytes) -> None:
    """Write bytes to `path` via a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_mask(path, mask: SegmentationMask) -> None:
    header = struct.pack("<4sIIII", MASK_MAGIC, mask.width, mask.height,
                         mask.n_bg, mask.n_fg)
    labels = np.ascontiguousarray(mask.labels, dtype="<u4").tobytes()
    atomic_write_bytes(path, header + labels)


def read_mask(path) -> SegmentationMask:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MASK_MAGIC:
        raise ValueError(f"{path}: not a mask file (bad magic or header)")
    _, width, height, n_bg, n_fg = struct.unpack("<4sIIII", data[:20])
    expected = 20 + 4 * width * height
    if len(data) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes for {width}x{height} labels, "
            f"got {len(data)}"
        )
    labels = np.frombuffer(data, dtype="<u4", offset=20)
    labels = labels.reshape(height, width).astype(np.int32)
    return SegmentationMask(labels=labels, n_bg=n_bg, n_fg=n_fg)


def write_attribution(path, amap: AttributionMap) -> None:
    try:
        code = _MODE_CODES[amap.mode]
    except KeyError:
        raise ValueError(f"unknown attribution mode {amap.mode!r}")
    header = struct.pack("<4sIIBI", ATTR_MAGIC, amap.width, amap.height,
                         code, amap.target_class)
    values = np.ascontiguousarray(amap.values, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + values)


def read_attribution(path) -> AttributionMap:
    data = Path(path).read_bytes()
    if len(data) < 17 or data[:4] != ATTR_MAGIC:
        raise ValueError(f"{path}: not an attribution file (bad magic or header)")
    _, width, height, code, target = struct.unpack("<4sIIBI", data[:17])
    if code not in _CODE_MODES:
        raise ValueError(f"{path}: unknown mode code {code}")
    expected = 17 + 4 * width * height
    if len(data) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes for {width}x{height} values, "
            f"got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=17)
    values = values.reshape(height, width).astype(np.float64)
    return AttributionMap(values=values, mode=_CODE_MODES[code],
                          target_class=target)


# -- PNG rendering ----------------------------------------------------------


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB, all components in [0, 1]."""
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    table = np.stack([
        np.stack([v, t, p], axis=-1),
        np.stack([q, v, p], axis=-1),
        np.stack([p, v, t], axis=-1),
        np.stack([p, q, v], axis=-1),
        np.stack([t, p, v], axis=-1),
        np.stack([v, p, q], axis=-1),
    ])
    return np.take_along_axis(table, i[None, ..., None], axis=0)[0]


def mask_to_png(path, mask: SegmentationMask) -> None:
    """Render a segmentation mask with one color per label for visual
    inspection: background patches in muted tones, foreground groups
    saturated. Colors are a fixed function of the label, so renders are
    reproducible."""
    labels = mask.labels.astype(np.float64)
    hue = (labels * 0.61803398875) % 1.0
    is_fg = mask.labels > mask.n_bg
    sat = np.where(is_fg, 0.85, 0.25)
    val = np.where(is_fg, 0.95, 0.75)
    rgb = _hsv_to_rgb(hue, sat, val)
    img = Image.fromarray((rgb * 255.0 + 0.5).astype(np.uint8), mode="RGB")
    _save_png(path, img)


def heatmap_png(path, amap: AttributionMap, page: np.ndarray,
                alpha: float = 0.6) -> None:
    """Render an attribution heatmap alpha-blended over the document.

    Positive values are drawn red, negative blue, zero neutral white; the
    map is normalized by its largest magnitude.
    """
    values = amap.values
    page = np.asarray(page, dtype=np.float64)
    if page.shape != values.shape:
        raise ValueError(
            f"page shape {page.shape} does not match attribution {values.shape}"
        )
    peak = np.abs(values).max()
    t = values / peak if peak > 0 else np.zeros_like(values)
    pos = np.clip(t, 0.0, 1.0)
    neg = np.clip(-t, 0.0, 1.0)
    heat = np.stack([1.0 - neg, 1.0 - np.abs(t), 1.0 - pos], axis=-1)
    doc = np.repeat(page[..., None], 3, axis=2)
    blended = (1.0 - alpha) * doc + alpha * heat
    img = Image.fromarray((np.clip(blended, 0, 1) * 255.0 + 0.5).astype(np.uint8),
                          mode="RGB")
    _save_png(path, img)


def _save_png(path, img: Image.Image) -> None:
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
