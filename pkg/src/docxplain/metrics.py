"""Quantitative evaluation of attribution maps.

AOPC ranks 8x8 patches by attribution, flips them most- or
least-relevant-first on the binarized page, and averages the confidence
drops; ABPC is the gap between the two orderings. Sensitivity and
infidelity probe robustness under small input perturbations; continuity
measures spatial smoothness. Larger ABPC and smaller
sensitivity/infidelity/continuity indicate better explanations.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .attribution import AttributionMap
from .imaging import otsu_binarize
from .model import ClassifierHandle, score_gray_images

__all__ = [
    "MORF",
    "LERF",
    "PerturbationCurve",
    "SensitivityResult",
    "MetricReport",
    "aopc_curve",
    "abpc",
    "sensitivity",
    "infidelity",
    "continuity",
    "write_report_json",
    "write_report_csv",
    "write_curve_csv",
]

MORF = "MoRF"
LERF = "LeRF"


@dataclass(frozen=True)
class PerturbationCurve:
    """Confidence-drop curve over increasing fractions of flipped patches.

    Always starts at (0, 0). The scalar AOPC is the mean drop over all
    steps including step zero.
    """

    fractions: np.ndarray
    drops: np.ndarray
    direction: str

    @property
    def aopc(self) -> float:
        return float(self.drops.mean())


@dataclass(frozen=True)
class SensitivityResult:
    """Max-sensitivity value. When the unperturbed attribution is a zero
    map the ratio is undefined; the raw numerator is reported instead and
    zero_denominator is set."""

    value: float
    zero_denominator: bool = False


@dataclass(frozen=True)
class MetricReport:
    """Per-sample or aggregate metric values."""

    aopc_morf: float
    aopc_lerf: float
    abpc: float
    sensitivity: float
    infidelity: float
    continuity: float
    n_samples: int = 1


def _tile_stats(values: np.ndarray, patch: int):
    """Mean of `values` over the patch grid (partial edge tiles allowed).
    Returns (means, row_starts, col_starts) with tiles in raster order."""
    h, w = values.shape
    row_starts = np.arange(0, h, patch)
    col_starts = np.arange(0, w, patch)
    sums = np.add.reduceat(np.add.reduceat(values, row_starts, axis=0),
                           col_starts, axis=1)
    row_sizes = np.diff(np.append(row_starts, h))
    col_sizes = np.diff(np.append(col_starts, w))
    means = sums / np.outer(row_sizes, col_sizes)
    return means, row_starts, col_starts


def aopc_curve(
    f: ClassifierHandle,
    img: np.ndarray,
    attr: AttributionMap | np.ndarray,
    target: int,
    direction: str,
    patch: int = 8,
    steps: int = 20,
) -> PerturbationCurve:
    """Pixel-flipping perturbation curve.

    The page is binarized, tiled into patch-sized squares, and tiles are
    ranked by mean attribution (descending for MoRF, ascending for LeRF,
    ties broken by raster index). At each step the top k*L/steps tiles are
    flipped (white to black and vice versa) and the drop relative to the
    unperturbed binarized page is recorded.
    """
    if direction not in (MORF, LERF):
        raise ValueError(f"direction must be {MORF!r} or {LERF!r}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    values = attr.values if isinstance(attr, AttributionMap) else np.asarray(attr)
    arr = np.asarray(img, dtype=np.float64)
    if values.shape != arr.shape:
        raise ValueError(
            f"attribution shape {values.shape} does not match image {arr.shape}"
        )

    binary, _ = otsu_binarize(arr)
    x0 = binary.astype(np.float64)

    means, row_starts, col_starts = _tile_stats(values, patch)
    n_tiles = means.size
    flat = means.ravel()
    idx = np.arange(n_tiles)
    if direction == MORF:
        order = np.lexsort((idx, -flat))
    else:
        order = np.lexsort((idx, flat))

    steps = min(steps, n_tiles)
    counts = [(k * n_tiles) // steps for k in range(steps + 1)]

    h, w = arr.shape
    n_cols = col_starts.size
    perturbed = []
    xk = x0.copy()
    for k in range(1, steps + 1):
        for tile in order[counts[k - 1]:counts[k]]:
            t = row_starts[tile // n_cols]
            l = col_starts[tile % n_cols]
            block = xk[t:t + patch, l:l + patch]
            block[:] = 1.0 - block
        perturbed.append(xk.copy())

    base = score_gray_images(f, x0)[0][target]
    drops = np.zeros(steps + 1, dtype=np.float64)
    if perturbed:
        scores = score_gray_images(f, np.stack(perturbed))[:, target]
        drops[1:] = base - scores
    fractions = np.asarray(counts, dtype=np.float64) / n_tiles
    return PerturbationCurve(fractions=fractions, drops=drops,
                             direction=direction)


def abpc(morf: PerturbationCurve, lerf: PerturbationCurve) -> float:
    """Area between the perturbation curves: AOPC(first) - AOPC(second)."""
    if not np.array_equal(morf.fractions, lerf.fractions):
        raise ValueError("curves were computed on different step grids")
    return morf.aopc - lerf.aopc


def sensitivity(
    explain_fn: Callable[[ClassifierHandle, np.ndarray, int], AttributionMap],
    f: ClassifierHandle,
    img: np.ndarray,
    target: int,
    radius: float = 0.02,
    n_samples: int = 10,
    seed: int = 0,
) -> SensitivityResult:
    """Max-sensitivity: worst-case relative change of the attribution map
    under uniform input noise bounded by `radius` in max norm.

    `explain_fn` must re-run the full attribution procedure; perturbed
    inputs are clipped back into [0, 1].
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    arr = np.asarray(img, dtype=np.float64)
    base = explain_fn(f, arr, target).values
    denom = float(np.linalg.norm(base))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        delta = rng.uniform(-radius, radius, size=arr.shape)
        perturbed = np.clip(arr + delta, 0.0, 1.0)
        other = explain_fn(f, perturbed, target).values
        worst = max(worst, float(np.linalg.norm(other - base)))
    if denom == 0.0:
        return SensitivityResult(value=worst, zero_denominator=True)
    return SensitivityResult(value=worst / denom)


def infidelity(
    f: ClassifierHandle,
    img: np.ndarray,
    attr: AttributionMap | np.ndarray,
    target: int,
    patch: int = 8,
    n_samples: int = 128,
    seed: int = 0,
) -> float:
    """Expected squared mismatch between the attribution's predicted score
    change and the model's actual change when a random patch of the image
    is zeroed out."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    values = attr.values if isinstance(attr, AttributionMap) else np.asarray(attr)
    arr = np.asarray(img, dtype=np.float64)
    if values.shape != arr.shape:
        raise ValueError("attribution and image shapes differ")
    h, w = arr.shape
    if patch > h or patch > w:
        raise ValueError(f"patch {patch} larger than image {w}x{h}")

    rng = np.random.default_rng(seed)
    tops = rng.integers(0, h - patch + 1, size=n_samples)
    lefts = rng.integers(0, w - patch + 1, size=n_samples)
    base = score_gray_images(f, arr)[0][target]

    gaps = np.zeros(n_samples, dtype=np.float64)
    stack = np.repeat(arr[None], min(n_samples, f.max_batch), axis=0)
    done = 0
    while done < n_samples:
        k = min(stack.shape[0], n_samples - done)
        dots = np.zeros(k)
        for row in range(k):
            t, l = tops[done + row], lefts[done + row]
            stack[row] = arr
            stack[row, t:t + patch, l:l + patch] = 0.0
            window = np.s_[t:t + patch, l:l + patch]
            dots[row] = float((arr[window] * values[window]).sum())
        scores = score_gray_images(f, stack[:k])[:, target]
        gaps[done:done + k] = dots - (base - scores)
        done += k
    return float(np.mean(gaps ** 2))


def continuity(attr: AttributionMap | np.ndarray) -> float:
    """Mean absolute spatial gradient: the horizontal and vertical mean
    absolute differences between adjacent pixels, averaged. Lower values
    mean smoother, easier-to-read maps."""
    values = attr.values if isinstance(attr, AttributionMap) else np.asarray(attr)
    if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
        raise ValueError(
            f"continuity needs a 2-D map of at least 2x2 pixels, "
            f"got shape {values.shape}"
        )
    horizontal = np.abs(np.diff(values, axis=1)).mean()
    vertical = np.abs(np.diff(values, axis=0)).mean()
    return float((horizontal + vertical) / 2.0)


# -- report serialization --------------------------------------------------


def write_report_json(path, rows: list[dict], aggregate: dict) -> None:
    """Persist per-sample metric rows plus their aggregate as JSON."""
    payload = {"samples": rows, "aggregate": aggregate}
    text = json.dumps(payload, indent=2, sort_keys=True)
    _atomic_write(path, text.encode())


def write_report_csv(path, rows: list[dict]) -> None:
    """One CSV row per sample, columns in a fixed order. Floats are
    written with repr so identical runs produce identical bytes."""
    if not rows:
        raise ValueError("no rows to write")
    fields = list(rows[0].keys())
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow(
            [repr(v) if isinstance(v, float) else v for v in (row[k] for k in fields)]
        )
    _atomic_write(path, buffer.getvalue().encode())


def write_curve_csv(path, curve: PerturbationCurve) -> None:
    """Export a perturbation curve as (fraction, mean_drop) rows."""
    lines = ["fraction_removed,mean_score_drop"]
    for frac, drop in zip(curve.fractions, curve.drops):
        lines.append(f"{frac:.10g},{drop:.10g}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def report_to_rows(report: MetricReport) -> dict:
    return asdict(report)


def _atomic_write(path, data: bytes) -> None:
    from .formats import atomic_write_bytes

    atomic_write_bytes(path, data)
