"""Structure-aware segmentation of document pages into feature groups.

A page is split twice: the white background is covered by a fixed grid of
patches, and the black foreground is dilated into blobs that become
connected components. The two label fields are merged into one mask whose
labels 1..n_bg are background patches and n_bg+1..n_bg+n_fg are foreground
groups. Running the foreground step with differently shaped dilation
kernels yields masks at different granularities (single words, columns,
text lines).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.segmentation import slic

from .imaging import (
    morph_dilate,
    morph_open,
    otsu_binarize,
    pad_to_square,
    resize_nearest,
    to_grayscale,
)
from .validation import check_binary, check_structuring_element

__all__ = [
    "SegmentationMask",
    "KernelConfig",
    "PreparedPage",
    "default_kernels",
    "prepare_page",
    "segment_background",
    "segment_foreground",
    "combine_masks",
    "postprocess",
    "build_masks",
    "masks_for_page",
]

#: Working resolution the segmentation pipeline runs at by default.
DEFAULT_WORKING_SIZE = 1024

#: Rectangle used by the opening step that denoises the binarized page.
DEFAULT_OPENING = (5, 5)

_LABEL_INF = np.iinfo(np.int32).max


@dataclass(frozen=True)
class SegmentationMask:
    """A per-pixel partition of a page into labeled feature groups.

    ``labels`` holds one int32 label per pixel. Labels 1..n_bg are
    background grid patches, labels n_bg+1..n_bg+n_fg are foreground
    groups. Foreground-only intermediates (before combination) use
    ``n_bg == 0`` with label 0 marking still-unassigned background.
    """

    labels: np.ndarray
    n_bg: int
    n_fg: int

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n_groups(self) -> int:
        return self.n_bg + self.n_fg

    def group_areas(self) -> np.ndarray:
        """Pixel count per label, indexed 0..n_groups (index 0 unused)."""
        return np.bincount(self.labels.ravel(), minlength=self.n_groups + 1)

    def validate(self) -> None:
        """Check the partition invariants; raises ValueError on violation."""
        lab = self.labels
        if lab.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {lab.shape}")
        lo, hi = int(lab.min()), int(lab.max())
        if lo < 1 or hi > self.n_groups:
            raise ValueError(
                f"labels outside 1..{self.n_groups}: range [{lo}, {hi}]"
            )
        areas = self.group_areas()
        empty_fg = np.nonzero(areas[self.n_bg + 1:] == 0)[0]
        if empty_fg.size:
            raise ValueError(
                f"foreground labels with zero pixels: "
                f"{(empty_fg + self.n_bg + 1).tolist()[:8]}"
            )


@dataclass(frozen=True)
class KernelConfig:
    """Per-granularity segmentation parameters.

    fg_kernel is the (kx, ky) dilation rectangle that consolidates
    foreground content before component labeling; bg_patch the background
    grid cell size; expansion the number of one-pixel growth rounds applied
    to foreground labels before downsampling; min_area the denoise
    threshold at model resolution; the slic_* fields control how oversized
    components are split into superpixels.
    """

    fg_kernel: tuple[int, int] = (5, 5)
    bg_patch: tuple[int, int] = (64, 64)
    expansion: int = 2
    min_area: int = 4
    slic_segments: int = 50
    slic_compactness: float = 10.0
    slic_area_trigger: float = 0.05

    def __post_init__(self):
        check_structuring_element(self.fg_kernel)
        px, py = self.bg_patch
        if px < 1 or py < 1:
            raise ValueError(f"bg_patch must be positive, got {self.bg_patch}")
        if self.expansion < 0:
            raise ValueError("expansion must be >= 0")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")
        if not 0.0 < self.slic_area_trigger <= 1.0:
            raise ValueError("slic_area_trigger must be in (0, 1]")


def default_kernels(bg_patch: tuple[int, int] = (64, 64)) -> list[KernelConfig]:
    """The three standard granularities: compact 5x5 for individual words,
    tall 3x15 to merge vertically stacked content, wide 15x3 for text
    lines. All share one background grid."""
    return [
        KernelConfig(fg_kernel=(5, 5), bg_patch=bg_patch),
        KernelConfig(fg_kernel=(3, 15), bg_patch=bg_patch),
        KernelConfig(fg_kernel=(15, 3), bg_patch=bg_patch),
    ]


@dataclass(frozen=True)
class PreparedPage:
    """A page normalized for segmentation and scoring.

    binary_work: {0,1} page at working resolution (square).
    gray_model: grayscale page at model resolution, the image the
      classifier actually scores.
    empty_foreground: set when binarization found no separable foreground.
    """

    binary_work: np.ndarray
    gray_model: np.ndarray
    empty_foreground: bool = field(default=False)


def prepare_page(
    img: np.ndarray,
    working_size: int = DEFAULT_WORKING_SIZE,
    model_res: tuple[int, int] = (224, 224),
    opening: tuple[int, int] = DEFAULT_OPENING,
) -> PreparedPage:
    """Normalize a raw page: grayscale, Otsu binarization, padding to
    square, nearest-neighbor resize to the working resolution, opening to
    drop speckle noise. Also produces the model-resolution grayscale view
    that classifiers score."""
    gray = to_grayscale(img)
    binary, empty = otsu_binarize(gray)
    binary = pad_to_square(binary, fill=1)
    binary = resize_nearest(binary, working_size, working_size)
    binary = morph_open(binary, opening)

    gray_sq = pad_to_square(gray, fill=1.0)
    mw, mh = model_res
    gray_model = resize_nearest(gray_sq, mw, mh)
    return PreparedPage(binary_work=binary, gray_model=gray_model,
                        empty_foreground=empty)


def segment_background(img: np.ndarray, patch: tuple[int, int]) -> SegmentationMask:
    """Cover the page with a grid of patch-sized cells labeled row-major
    starting at 1. The patch must divide the image evenly."""
    binary = check_binary(img)
    h, w = binary.shape
    px, py = patch
    if px > w or py > h:
        raise ValueError(f"patch {patch} larger than image {w}x{h}")
    if w % px or h % py:
        raise ValueError(
            f"patch {patch} must divide the working resolution {w}x{h}"
        )
    nx, ny = w // px, h // py
    rows = np.arange(h) // py
    cols = np.arange(w) // px
    labels = (rows[:, None] * nx + cols[None, :] + 1).astype(np.int32)
    return SegmentationMask(labels=labels, n_bg=nx * ny, n_fg=0)


def segment_foreground(img: np.ndarray, fg_kernel: tuple[int, int]) -> SegmentationMask:
    """Dilate the black foreground by fg_kernel, then label the resulting
    blobs as 8-connected components. Labels follow raster-scan discovery
    order; background pixels get label 0. The dilated footprint is the
    group's extent."""
    dilated = morph_dilate(img, fg_kernel)
    blobs = dilated == 0
    labels, n = ndimage.label(blobs, structure=np.ones((3, 3), bool))
    labels = labels.astype(np.int32)
    if n:
        labels = _relabel_raster_order(labels, n)
    return SegmentationMask(labels=labels, n_bg=0, n_fg=int(n))


def _relabel_raster_order(labels: np.ndarray, n: int) -> np.ndarray:
    # ndimage.label already scans row-major, but the discovery order is an
    # API contract here, so enforce it rather than rely on scipy internals.
    flat = labels.ravel()
    values, first = np.unique(flat, return_index=True)
    nz = values != 0
    order = np.argsort(first[nz], kind="stable")
    mapping = np.zeros(n + 1, dtype=np.int32)
    mapping[values[nz][order]] = np.arange(1, n + 1, dtype=np.int32)
    return mapping[labels]


def combine_masks(bg: SegmentationMask, fg: SegmentationMask) -> SegmentationMask:
    """Merge background grid and foreground components into one partition:
    foreground labels are offset by n_bg, pixels without a foreground label
    keep their grid label."""
    if bg.labels.shape != fg.labels.shape:
        raise ValueError(
            f"mask dimensions differ: {bg.labels.shape} vs {fg.labels.shape}"
        )
    if fg.n_bg != 0 or bg.n_fg != 0:
        raise ValueError("combine_masks expects a grid mask and a foreground mask")
    labels = np.where(fg.labels == 0, bg.labels, fg.labels + bg.n_bg)
    return SegmentationMask(labels=labels.astype(np.int32),
                            n_bg=bg.n_bg, n_fg=fg.n_fg)


def _expand_foreground(labels: np.ndarray, n_bg: int, rounds: int) -> np.ndarray:
    """Grow every foreground label outward one pixel per round, writing only
    over background-labeled pixels. Where two regions collide the lower
    label wins."""
    out = labels.copy()
    for _ in range(rounds):
        fg_field = np.where(out > n_bg, out, _LABEL_INF)
        neighbor_min = ndimage.minimum_filter(
            fg_field, size=3, mode="constant", cval=_LABEL_INF
        )
        grow = (out <= n_bg) & (neighbor_min < _LABEL_INF)
        if not grow.any():
            break
        out[grow] = neighbor_min[grow]
    return out


def _split_large_components(
    labels: np.ndarray, n_bg: int, cfg: KernelConfig, gray: np.ndarray | None
) -> np.ndarray:
    """Break foreground components covering a large image fraction into
    SLIC superpixels, each becoming a fresh label. Superpixels cluster the
    grayscale content under the component; without content they fall back
    to purely spatial clustering."""
    h, w = labels.shape
    trigger = cfg.slic_area_trigger * h * w
    areas = np.bincount(labels.ravel())
    big = [
        lbl for lbl in range(n_bg + 1, areas.size)
        if areas[lbl] >= trigger
    ]
    if not big:
        return labels
    content = gray if gray is not None else np.zeros((h, w))
    out = labels.copy()
    next_label = int(labels.max())
    for lbl in big:
        region = labels == lbl
        seg = slic(
            content,
            n_segments=cfg.slic_segments,
            compactness=cfg.slic_compactness,
            mask=region,
            start_label=1,
            channel_axis=None,
        )
        inside = seg[region]
        if inside.max() <= 0:
            continue
        # Pixels slic left unassigned keep the original component label.
        out[region] = np.where(inside > 0, next_label + inside, lbl)
        next_label += int(inside.max())
    return out


def _absorb_small_components(
    labels: np.ndarray, n_bg: int, min_area: int
) -> np.ndarray:
    """Reassign foreground labels smaller than min_area to the dominant
    adjacent background label (dominant adjacent foreground label when no
    background touches; lower label wins ties)."""
    if min_area <= 0:
        return labels
    out = labels.copy()
    areas = np.bincount(out.ravel())
    small = [
        lbl for lbl in range(n_bg + 1, areas.size)
        if 0 < areas[lbl] < min_area
    ]
    for lbl in small:
        region = out == lbl
        if not region.any():
            continue
        ring = ndimage.binary_dilation(region, np.ones((3, 3), bool)) & ~region
        neighbors = out[ring]
        neighbors = neighbors[neighbors != lbl]
        if neighbors.size == 0:
            continue
        bg_neighbors = neighbors[neighbors <= n_bg]
        pool = bg_neighbors if bg_neighbors.size else neighbors
        counts = np.bincount(pool)
        out[region] = int(np.argmax(counts))  # first max = lowest label
    return out


def _compact_labels(labels: np.ndarray, n_bg: int) -> SegmentationMask:
    """Renumber surviving foreground labels to a contiguous range above
    n_bg; background labels 1..n_bg are kept even when empty (the grid
    geometry is part of the mask's meaning)."""
    present = np.unique(labels)
    fg_present = present[present > n_bg]
    mapping = np.arange(max(int(labels.max()) + 1, n_bg + 1), dtype=np.int32)
    mapping[fg_present] = np.arange(
        n_bg + 1, n_bg + 1 + fg_present.size, dtype=np.int32
    )
    return SegmentationMask(
        labels=mapping[labels], n_bg=n_bg, n_fg=int(fg_present.size)
    )


def postprocess(
    mask: SegmentationMask,
    cfg: KernelConfig,
    model_res: tuple[int, int],
    gray_model: np.ndarray | None = None,
) -> SegmentationMask:
    """Refine a combined mask and bring it to model resolution.

    Steps, in order: expand foreground labels so thin structures survive
    downsampling; nearest-neighbor resize to model_res; split components
    covering at least slic_area_trigger of the image into SLIC
    superpixels (using gray_model as content when given); absorb
    foreground specks below min_area into their surroundings; compact the
    label range.
    """
    labels = _expand_foreground(mask.labels, mask.n_bg, cfg.expansion)
    mw, mh = model_res
    labels = resize_nearest(labels, mw, mh)
    if gray_model is not None and gray_model.shape != labels.shape:
        raise ValueError(
            f"gray_model shape {gray_model.shape} does not match model "
            f"resolution {(mh, mw)}"
        )
    labels = _split_large_components(labels, mask.n_bg, cfg, gray_model)
    labels = _absorb_small_components(labels, mask.n_bg, cfg.min_area)
    return _compact_labels(labels, mask.n_bg)


def masks_for_page(
    page: PreparedPage,
    kernels: list[KernelConfig],
    model_res: tuple[int, int],
) -> list[SegmentationMask]:
    """Run the per-kernel stage (dilate, components, grid, combine,
    postprocess) on an already prepared page."""
    if not kernels:
        raise ValueError("at least one kernel configuration is required")
    masks = []
    for cfg in kernels:
        fg = segment_foreground(page.binary_work, cfg.fg_kernel)
        bg = segment_background(page.binary_work, cfg.bg_patch)
        combined = combine_masks(bg, fg)
        masks.append(postprocess(combined, cfg, model_res, page.gray_model))
    return masks


def build_masks(
    img: np.ndarray,
    kernels: list[KernelConfig] | None = None,
    model_res: tuple[int, int] = (224, 224),
    working_size: int = DEFAULT_WORKING_SIZE,
    opening: tuple[int, int] = DEFAULT_OPENING,
) -> list[SegmentationMask]:
    """Full segmentation pipeline: normalize the page once, then produce
    one combined mask per kernel configuration (three by default)."""
    if kernels is None:
        kernels = default_kernels()
    page = prepare_page(img, working_size=working_size, model_res=model_res,
                        opening=opening)
    return masks_for_page(page, kernels, model_res)
