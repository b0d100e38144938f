"""Independent brute-force oracles.

Everything here is deliberately written the slow, obvious way (explicit
loops, set algebra, exhaustive enumeration) and shares no code with the
package, so tests compare two genuinely independent routes to the same
answer.
"""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def erode(fg: np.ndarray, kx: int, ky: int) -> np.ndarray:
    """Set-algebra erosion: a pixel survives iff every pixel under the
    centered kx-by-ky rectangle is foreground (outside = background)."""
    h, w = fg.shape
    rx, ry = kx // 2, ky // 2
    out = np.zeros_like(fg, dtype=bool)
    for i in range(h):
        for j in range(w):
            keep = True
            for di in range(-ry, ry + 1):
                for dj in range(-rx, rx + 1):
                    ii, jj = i + di, j + dj
                    if not (0 <= ii < h and 0 <= jj < w and fg[ii, jj]):
                        keep = False
            out[i, j] = keep
    return out


def dilate(fg: np.ndarray, kx: int, ky: int) -> np.ndarray:
    """Set-algebra dilation: union of the rectangle footprint over all
    foreground pixels."""
    h, w = fg.shape
    rx, ry = kx // 2, ky // 2
    out = np.zeros_like(fg, dtype=bool)
    for i in range(h):
        for j in range(w):
            if not fg[i, j]:
                continue
            for di in range(-ry, ry + 1):
                for dj in range(-rx, rx + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        out[ii, jj] = True
    return out


def otsu(gray: np.ndarray):
    """Exhaustive scan over all 256 thresholds maximizing between-class
    variance; smallest threshold wins ties. Returns (threshold, binary,
    degenerate)."""
    levels = np.rint(np.asarray(gray, dtype=np.float64) * 255).astype(int)
    flat = levels.ravel()
    if np.unique(flat).size < 2:
        return None, np.ones_like(levels, dtype=np.uint8), True
    best_t, best_v = 0, -1.0
    n = flat.size
    for t in range(256):
        c0 = flat[flat <= t]
        c1 = flat[flat > t]
        if c0.size == 0 or c1.size == 0:
            continue
        v = (c0.size / n) * (c1.size / n) * (c0.mean() - c1.mean()) ** 2
        if v > best_v:
            best_v, best_t = v, t
    binary = (levels > best_t).astype(np.uint8)
    return best_t, binary, False


def resize_nearest(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Index-mapping resize: output (i, j) reads input (floor(i*H/out_h),
    floor(j*W/out_w))."""
    in_h, in_w = arr.shape
    out = np.empty((out_h, out_w), dtype=arr.dtype)
    for i in range(out_h):
        for j in range(out_w):
            out[i, j] = arr[(i * in_h) // out_h, (j * in_w) // out_w]
    return out


def connected_components(fg: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected flood fill, labels in raster-scan discovery order."""
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int32)
    n = 0
    for i in range(h):
        for j in range(w):
            if fg[i, j] and labels[i, j] == 0:
                n += 1
                queue = deque([(i, j)])
                labels[i, j] = n
                while queue:
                    ci, cj = queue.popleft()
                    for di in (-1, 0, 1):
                        for dj in (-1, 0, 1):
                            ii, jj = ci + di, cj + dj
                            if (0 <= ii < h and 0 <= jj < w and fg[ii, jj]
                                    and labels[ii, jj] == 0):
                                labels[ii, jj] = n
                                queue.append((ii, jj))
    return labels, n


def ablation_map(f, img: np.ndarray, mask, target: int, mode: str) -> np.ndarray:
    """Brute-force normalized ablation: rebuild every ablated image from
    scratch, call the model once per group, spread score/area over the
    group's pixels."""
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.float64)
    base = f.score_batch(img[None])[0][target]
    first = mask.n_bg + 1 if mode == "fg" else 1
    for lbl in range(first, mask.n_bg + mask.n_fg + 1):
        pixels = [(i, j) for i in range(h) for j in range(w)
                  if mask.labels[i, j] == lbl]
        if not pixels:
            continue
        fill = 0.0 if lbl <= mask.n_bg else 1.0
        ablated = img.copy()
        for (i, j) in pixels:
            ablated[i, j] = fill
        score = base - f.score_batch(ablated[None])[0][target]
        for (i, j) in pixels:
            out[i, j] = score / len(pixels)
    return out


def occlusion(f, img: np.ndarray, target: int, patch: int, stride: int,
              fill: float) -> np.ndarray:
    """Per-window occlusion built one occluded image at a time."""
    h, w = img.shape
    base = f.score_batch(img[None])[0][target]
    acc = np.zeros((h, w))
    cover = np.zeros((h, w))
    tops = sorted({min(t, h - patch) for t in range(0, h - patch + 1, stride)}
                  | {h - patch})
    lefts = sorted({min(l, w - patch) for l in range(0, w - patch + 1, stride)}
                   | {w - patch})
    for t in tops:
        for l in lefts:
            occluded = img.copy()
            occluded[t:t + patch, l:l + patch] = fill
            drop = base - f.score_batch(occluded[None])[0][target]
            acc[t:t + patch, l:l + patch] += drop
            cover[t:t + patch, l:l + patch] += 1
    return acc / cover


def flip_drops_all_orderings(f, x0: np.ndarray, tiles: list, target: int):
    """Drop sequences for every permutation of patch-flip orderings.

    x0 must already be binary {0,1}; tiles are (top, left, size) tuples.
    Returns an array of shape (n_orderings, len(tiles)) whose row k step s
    is f(x0) - f(x0 with the first s+1 tiles of ordering k flipped).
    """
    base = f.score_batch(x0[None])[0][target]
    rows = []
    for perm in itertools.permutations(range(len(tiles))):
        x = x0.copy()
        drops = []
        for tile_idx in perm:
            t, l, size = tiles[tile_idx]
            x[t:t + size, l:l + size] = 1.0 - x[t:t + size, l:l + size]
            drops.append(base - f.score_batch(x[None])[0][target])
        rows.append(drops)
    return np.asarray(rows)


def infidelity_same_seed(f, img: np.ndarray, attr: np.ndarray, target: int,
                         patch: int, n_samples: int, seed: int) -> float:
    """Re-implementation of the infidelity estimator with its documented
    sampling scheme: uniform top-left corners from a seeded generator, one
    zeroed patch per sample."""
    h, w = img.shape
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, h - patch + 1, size=n_samples)
    lefts = rng.integers(0, w - patch + 1, size=n_samples)
    base = f.score_batch(img[None])[0][target]
    total = 0.0
    for t, l in zip(tops, lefts):
        perturbed = img.copy()
        perturbed[t:t + patch, l:l + patch] = 0.0
        drop = base - f.score_batch(perturbed[None])[0][target]
        dot = float((img[t:t + patch, l:l + patch]
                     * attr[t:t + patch, l:l + patch]).sum())
        total += (dot - drop) ** 2
    return total / n_samples


def infidelity_exact(f, img: np.ndarray, attr: np.ndarray, target: int,
                     patch: int) -> float:
    """Exact expectation of the infidelity functional by enumerating every
    patch position."""
    h, w = img.shape
    base = f.score_batch(img[None])[0][target]
    total = 0.0
    count = 0
    for t in range(h - patch + 1):
        for l in range(w - patch + 1):
            perturbed = img.copy()
            perturbed[t:t + patch, l:l + patch] = 0.0
            drop = base - f.score_batch(perturbed[None])[0][target]
            dot = float((img[t:t + patch, l:l + patch]
                         * attr[t:t + patch, l:l + patch]).sum())
            total += (dot - drop) ** 2
            count += 1
    return total / count
