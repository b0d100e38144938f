"""Feature-ablation attribution engine plus occlusion and random baselines.

A feature group's raw importance is the confidence drop when the group is
replaced by its baseline value (black for background groups, white for
foreground groups). Raw scores are normalized by group area so large
groups do not dominate, and the per-kernel maps are summed into the final
attribution. In "fg" mode only foreground groups are ablated; "fg+bg"
ablates everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ClassifierHandle, score_gray_images
from .segmentation import (
    KernelConfig,
    SegmentationMask,
    default_kernels,
    masks_for_page,
    prepare_page,
)

__all__ = [
    "MODE_FG",
    "MODE_FG_BG",
    "MODE_OCCLUSION",
    "MODE_RANDOM",
    "AttributionMap",
    "GroupScore",
    "baseline_for",
    "ablate_group",
    "attribute_mask",
    "attribute",
    "occlusion_map",
    "random_map",
]

MODE_FG = "fg"
MODE_FG_BG = "fg+bg"
MODE_OCCLUSION = "occlusion"
MODE_RANDOM = "random"

_ABLATION_MODES = (MODE_FG, MODE_FG_BG)

#: Internal scoring chunk cap; results are independent of this value.
_CHUNK = 64


@dataclass(frozen=True)
class AttributionMap:
    """Signed per-pixel importance field at model resolution."""

    values: np.ndarray
    mode: str
    target_class: int

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GroupScore:
    """Raw ablation score for one feature group."""

    label: int
    score: float
    area: int


def baseline_for(mask: SegmentationMask) -> np.ndarray:
    """Per-pixel replacement values: 0 (black) on background groups, 1
    (white) on foreground groups."""
    return (mask.labels > mask.n_bg).astype(np.float64)


def _check_model_image(img: np.ndarray, mask: SegmentationMask) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.shape != mask.labels.shape:
        raise ValueError(
            f"image shape {arr.shape} does not match mask {mask.labels.shape}"
        )
    return arr


def ablate_group(
    f: ClassifierHandle,
    img: np.ndarray,
    mask: SegmentationMask,
    label: int,
    target: int,
) -> GroupScore:
    """Raw score of one group: f(img) minus f(img with the group replaced
    by its baseline value). Empty groups score 0."""
    arr = _check_model_image(img, mask)
    if not 1 <= label <= mask.n_groups:
        raise ValueError(f"label {label} outside 1..{mask.n_groups}")
    region = mask.labels == label
    area = int(region.sum())
    if area == 0:
        return GroupScore(label=label, score=0.0, area=0)
    base = score_gray_images(f, arr)[0][target]
    ablated = arr.copy()
    ablated[region] = baseline_for(mask)[region]
    score = base - score_gray_images(f, ablated)[0][target]
    return GroupScore(label=label, score=float(score), area=area)


def _score_groups(
    f: ClassifierHandle,
    img: np.ndarray,
    mask: SegmentationMask,
    labels: list[int],
    target: int,
) -> list[GroupScore]:
    """Batched ablation of many groups against a shared unablated score."""
    baseline = baseline_for(mask)
    areas = mask.group_areas()
    base = score_gray_images(f, img)[0][target]
    out: list[GroupScore] = []
    todo = [lbl for lbl in labels if areas[lbl] > 0]
    for lbl in labels:
        if areas[lbl] == 0:
            out.append(GroupScore(label=lbl, score=0.0, area=0))
    chunk = min(f.max_batch, _CHUNK)
    for start in range(0, len(todo), chunk):
        part = todo[start:start + chunk]
        stack = np.repeat(img[None], len(part), axis=0)
        for row, lbl in enumerate(part):
            region = mask.labels == lbl
            stack[row][region] = baseline[region]
        scores = score_gray_images(f, stack)[:, target]
        out.extend(
            GroupScore(label=lbl, score=float(base - s), area=int(areas[lbl]))
            for lbl, s in zip(part, scores)
        )
    out.sort(key=lambda g: g.label)
    return out


def attribute_mask(
    f: ClassifierHandle,
    img: np.ndarray,
    mask: SegmentationMask,
    target: int,
    mode: str = MODE_FG_BG,
    return_scores: bool = False,
):
    """Area-normalized attribution map for one mask.

    Every scored group's pixels carry score/area, so the pixel sum over a
    group reproduces its raw score. In "fg" mode background pixels stay 0.
    """
    if mode not in _ABLATION_MODES:
        raise ValueError(f"mode must be one of {_ABLATION_MODES}, got {mode!r}")
    arr = _check_model_image(img, mask)
    first = mask.n_bg + 1 if mode == MODE_FG else 1
    labels = list(range(first, mask.n_groups + 1))
    scores = _score_groups(f, arr, mask, labels, target)

    per_label = np.zeros(mask.n_groups + 1, dtype=np.float64)
    for g in scores:
        if g.area > 0:
            per_label[g.label] = g.score / g.area
    values = per_label[mask.labels]
    amap = AttributionMap(values=values, mode=mode, target_class=int(target))
    if return_scores:
        return amap, scores
    return amap


def attribute(
    f: ClassifierHandle,
    img: np.ndarray,
    kernels: list[KernelConfig] | None = None,
    target: int | None = None,
    mode: str = MODE_FG_BG,
    working_size: int = 1024,
    opening: tuple[int, int] = (5, 5),
) -> AttributionMap:
    """Full attribution of a raw page: build one mask per kernel, ablate
    each, and sum the normalized per-kernel maps.

    ``target=None`` explains the class the model itself predicts for the
    (unablated) page.
    """
    if kernels is None:
        kernels = default_kernels()
    model_res = (f.input_width, f.input_height)
    page = prepare_page(img, working_size=working_size, model_res=model_res,
                        opening=opening)
    masks = masks_for_page(page, kernels, model_res)
    if target is None:
        target = f.predict(page.gray_model)
    total = np.zeros_like(page.gray_model, dtype=np.float64)
    for mask in masks:
        total += attribute_mask(f, page.gray_model, mask, target, mode).values
    return AttributionMap(values=total, mode=mode, target_class=int(target))


def occlusion_map(
    f: ClassifierHandle,
    img: np.ndarray,
    target: int,
    patch: tuple[int, int] = (16, 16),
    stride: tuple[int, int] = (8, 8),
    fill: float = 0.5,
) -> AttributionMap:
    """Sliding-window occlusion baseline: per window, the confidence drop
    when the window is filled with mid-gray; drops accumulate into the
    covered pixels and are divided by the per-pixel coverage count."""
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape
    pw, ph = patch
    sw, sh = stride
    if not (pw >= sw >= 1 and ph >= sh >= 1):
        raise ValueError("stride must satisfy 1 <= stride <= patch")
    if pw > w or ph > h:
        raise ValueError(f"patch {patch} larger than image {w}x{h}")

    tops = _window_starts(h, ph, sh)
    lefts = _window_starts(w, pw, sw)
    windows = [(t, l) for t in tops for l in lefts]

    base = score_gray_images(f, arr)[0][target]
    acc = np.zeros((h, w), dtype=np.float64)
    cover = np.zeros((h, w), dtype=np.float64)
    chunk = min(f.max_batch, _CHUNK)
    for start in range(0, len(windows), chunk):
        part = windows[start:start + chunk]
        stack = np.repeat(arr[None], len(part), axis=0)
        for row, (t, l) in enumerate(part):
            stack[row, t:t + ph, l:l + pw] = fill
        scores = score_gray_images(f, stack)[:, target]
        for (t, l), s in zip(part, scores):
            acc[t:t + ph, l:l + pw] += base - s
            cover[t:t + ph, l:l + pw] += 1.0
    values = acc / cover
    return AttributionMap(values=values, mode=MODE_OCCLUSION,
                          target_class=int(target))


def _window_starts(size: int, extent: int, step: int) -> list[int]:
    starts = list(range(0, size - extent + 1, step))
    if starts[-1] != size - extent:
        starts.append(size - extent)  # clamp a final window so coverage >= 1
    return starts


def random_map(width: int, height: int, seed: int) -> AttributionMap:
    """Seeded i.i.d. uniform [0, 1) attribution; the no-information
    baseline."""
    values = np.random.default_rng(seed).random((height, width))
    return AttributionMap(values=values, mode=MODE_RANDOM, target_class=0)
