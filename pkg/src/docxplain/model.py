"""Black-box classifier handles.

The engine only ever calls ``score_batch``: a batch of images in, one
confidence vector per image out. Handles must be deterministic; the base
class additionally caches scores by image content hash so repeated
evaluations of the same pixels are reused.

Backends: analytic synthetic classifiers (closed-form, used for testing
and demos), an external process speaking a fixed binary protocol, and an
optional ONNX runtime wrapper.
"""

from __future__ import annotations

import hashlib
import struct
import subprocess
from abc import ABC, abstractmethod
from collections import OrderedDict

import numpy as np

from .validation import check_rect

__all__ = [
    "ClassifierHandle",
    "ConstantClassifier",
    "RegionDensityClassifier",
    "MultiRegionLinearClassifier",
    "SubprocessClassifier",
    "OnnxClassifier",
    "ProtocolError",
    "synthetic_classifier",
    "score_gray_images",
]

REQUEST_MAGIC = b"DXP1"
REPLY_MAGIC = b"DXR1"


class ProtocolError(RuntimeError):
    """Violation of the scoring wire protocol.

    ``byte_offset`` is the position in the child's reply stream where the
    violation was detected.
    """

    def __init__(self, message: str, byte_offset: int = 0):
        super().__init__(f"{message} (at reply byte offset {byte_offset})")
        self.byte_offset = byte_offset


class ClassifierHandle(ABC):
    """Deterministic scoring function over image batches.

    Subclasses implement ``_score`` on a float64 ``(N, H, W, C)`` array and
    declare their input geometry. Calls with more than ``max_batch`` images
    are rejected; chunk at the call site (``score_gray_images`` does).
    """

    backend = "abstract"

    def __init__(self, input_size: tuple[int, int], channels: int,
                 n_classes: int, max_batch: int = 32, cache_size: int = 8192):
        w, h = input_size
        if w < 1 or h < 1:
            raise ValueError(f"input size must be positive, got {input_size}")
        if channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {channels}")
        if n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {n_classes}")
        if max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {max_batch}")
        self.input_width = w
        self.input_height = h
        self.input_channels = channels
        self.n_classes = n_classes
        self.max_batch = max_batch
        self._cache: OrderedDict[bytes, np.ndarray] = OrderedDict()
        self._cache_size = cache_size

    # -- public API ------------------------------------------------------

    def score_batch(self, images: np.ndarray) -> np.ndarray:
        """Score a batch; returns an (N, n_classes) float64 array in input
        order."""
        batch = self._as_batch(images)
        n = batch.shape[0]
        if n > self.max_batch:
            raise ValueError(f"batch of {n} exceeds max_batch={self.max_batch}")
        if self._cache_size <= 0:
            return self._score(batch)

        keys = [self._content_key(batch[i]) for i in range(n)]
        out = np.empty((n, self.n_classes), dtype=np.float64)
        missing = [i for i, k in enumerate(keys) if k not in self._cache]
        if missing:
            fresh = self._score(batch[missing])
            for row, i in enumerate(missing):
                self._cache_put(keys[i], fresh[row])
        for i, k in enumerate(keys):
            out[i] = self._cache[k]
        return out

    def score_image(self, image: np.ndarray) -> np.ndarray:
        """Score a single image; returns the (n_classes,) vector."""
        return self.score_batch(np.asarray(image)[None])[0]

    def predict(self, image: np.ndarray) -> int:
        """Index of the highest-scoring class (ties go to the lowest index)."""
        return int(np.argmax(self.score_image(image)))

    # -- internals -------------------------------------------------------

    @abstractmethod
    def _score(self, batch: np.ndarray) -> np.ndarray:
        """Score a validated (N, H, W, C) batch."""

    def _as_batch(self, images: np.ndarray) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float64)
        if arr.ndim == 3:  # (N, H, W) single-channel shorthand
            arr = arr[..., None]
        if arr.ndim != 4:
            raise ValueError(
                f"expected (N, H, W, C) or (N, H, W) batch, got shape {arr.shape}"
            )
        n, h, w, c = arr.shape
        if c == 1 and self.input_channels == 3:
            arr = np.repeat(arr, 3, axis=3)
            c = 3
        if (h, w, c) != (self.input_height, self.input_width, self.input_channels):
            raise ValueError(
                f"image shape {(h, w, c)} does not match classifier input "
                f"{(self.input_height, self.input_width, self.input_channels)}"
            )
        return arr

    def _content_key(self, image: np.ndarray) -> bytes:
        return hashlib.blake2b(
            np.ascontiguousarray(image).tobytes(), digest_size=16
        ).digest()

    def _cache_put(self, key: bytes, value: np.ndarray) -> None:
        self._cache[key] = np.array(value, dtype=np.float64)
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)


def score_gray_images(handle: ClassifierHandle, grays: np.ndarray) -> np.ndarray:
    """Score a stack of single-channel images, chunking to the handle's
    max_batch. grays is (N, H, W); returns (N, n_classes)."""
    grays = np.asarray(grays, dtype=np.float64)
    if grays.ndim == 2:
        grays = grays[None]
    out = np.empty((grays.shape[0], handle.n_classes), dtype=np.float64)
    step = handle.max_batch
    for start in range(0, grays.shape[0], step):
        chunk = grays[start:start + step]
        out[start:start + chunk.shape[0]] = handle.score_batch(chunk)
    return out


# -- synthetic backends ---------------------------------------------------


class ConstantClassifier(ClassifierHandle):
    """Ignores its input and returns a fixed score vector. Scalar shorthand
    ``ConstantClassifier(0.7)`` yields the vector (0.7, 0.3)."""

    backend = "synthetic"

    def __init__(self, scores=0.5, input_size=(224, 224), channels=1,
                 max_batch=32):
        vec = np.atleast_1d(np.asarray(scores, dtype=np.float64))
        if vec.size == 1:
            vec = np.array([float(vec[0]), 1.0 - float(vec[0])])
        if not np.isfinite(vec).all():
            raise ValueError("scores must be finite")
        super().__init__(input_size, channels, vec.size, max_batch,
                         cache_size=0)
        self.scores = vec

    def _score(self, batch):
        return np.tile(self.scores, (batch.shape[0], 1))


def _black(batch: np.ndarray) -> np.ndarray:
    """Per-pixel black indicator: 1 where the channel-mean intensity is
    below 0.5, else 0. Shape (N, H, W). Thresholding makes the synthetic
    models exactly invariant to sub-threshold noise, which the robustness
    metrics rely on."""
    return (batch.mean(axis=3) < 0.5).astype(np.float64)


class RegionDensityClassifier(ClassifierHandle):
    """Class-0 score is the black-pixel fraction inside one rectangle;
    class 1 is its complement. Fully analytic, so every ablation has a
    closed form: whitening a pixel set P changes the score by exactly
    -|P intersect R intersect black| / |R|."""

    backend = "synthetic"

    def __init__(self, region, input_size=(224, 224), channels=1,
                 max_batch=32):
        super().__init__(input_size, channels, 2, max_batch, cache_size=0)
        self.region = check_rect(region, self.input_height, self.input_width,
                                 name="region")

    def _score(self, batch):
        top, left, bottom, right = self.region
        d = _black(batch)[:, top:bottom, left:right]
        s = d.mean(axis=(1, 2))
        return np.stack([s, 1.0 - s], axis=1)

    def contribution_field(self) -> np.ndarray:
        """Analytic contribution of each black pixel to the class-0
        score: 1/|R| inside the region, 0 outside."""
        top, left, bottom, right = self.region
        field = np.zeros((self.input_height, self.input_width))
        field[top:bottom, left:right] = 1.0 / ((bottom - top) * (right - left))
        return field


class MultiRegionLinearClassifier(ClassifierHandle):
    """Class-0 score is a weighted sum of black-pixel fractions over
    disjoint rectangles, optionally clamped to [0, 1]. Remaining classes
    share the complement equally."""

    backend = "synthetic"

    def __init__(self, regions, weights, input_size=(224, 224), channels=1,
                 n_classes=2, max_batch=32, clamp=True):
        super().__init__(input_size, channels, n_classes, max_batch,
                         cache_size=0)
        self.weights = np.asarray(weights, dtype=np.float64)
        if not np.isfinite(self.weights).all():
            raise ValueError("weights must be finite")
        if len(regions) != self.weights.size:
            raise ValueError("one weight per region required")
        self.regions = [
            check_rect(r, self.input_height, self.input_width,
                       name=f"regions[{i}]")
            for i, r in enumerate(regions)
        ]
        taken = np.zeros((self.input_height, self.input_width), dtype=bool)
        for (top, left, bottom, right) in self.regions:
            block = taken[top:bottom, left:right]
            if block.any():
                raise ValueError("regions must be disjoint")
            block[:] = True
        self.clamp = clamp

    def _score(self, batch):
        d = _black(batch)
        s = np.zeros(batch.shape[0])
        for w, (top, left, bottom, right) in zip(self.weights, self.regions):
            s += w * d[:, top:bottom, left:right].mean(axis=(1, 2))
        if self.clamp:
            s = np.clip(s, 0.0, 1.0)
        rest = (1.0 - s) / (self.n_classes - 1)
        return np.concatenate(
            [s[:, None], np.tile(rest[:, None], (1, self.n_classes - 1))],
            axis=1,
        )

    def contribution_field(self) -> np.ndarray:
        """Analytic contribution of each black pixel to the unclamped
        class-0 score: w_r/|r| inside region r, 0 elsewhere."""
        field = np.zeros((self.input_height, self.input_width))
        for w, (top, left, bottom, right) in zip(self.weights, self.regions):
            field[top:bottom, left:right] = w / ((bottom - top) * (right - left))
        return field


_SYNTHETIC_KINDS = {
    "constant": ConstantClassifier,
    "region_density": RegionDensityClassifier,
    "multi_region_linear": MultiRegionLinearClassifier,
}


def synthetic_classifier(kind: str, **params) -> ClassifierHandle:
    """Build a synthetic classifier by kind name; see the class docs for
    the per-kind parameters."""
    try:
        cls = _SYNTHETIC_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown synthetic classifier {kind!r}; "
            f"choose from {sorted(_SYNTHETIC_KINDS)}"
        )
    return cls(**params)


# -- external backends ----------------------------------------------------


class SubprocessClassifier(ClassifierHandle):
    """Scores batches through a child process over stdin/stdout.

    Request: magic b"DXP1", u32 batch, u32 h, u32 w, u32 c, then
    batch*h*w*c little-endian float32 pixels in [0, 1].
    Reply: magic b"DXR1", u32 batch, u32 n_classes, then batch*n_classes
    little-endian float32 scores. One request is in flight at a time; the
    child exits when its stdin reaches EOF.
    """

    backend = "subprocess"

    def __init__(self, command, input_size, channels=1, n_classes=2,
                 max_batch=32, cache_size=8192):
        super().__init__(input_size, channels, n_classes, max_batch,
                         cache_size)
        self.command = list(command)
        self._proc: subprocess.Popen | None = None

    def _ensure_started(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )

    def _score(self, batch):
        self._ensure_started()
        proc = self._proc
        n = batch.shape[0]
        header = struct.pack(
            "<4sIIII", REQUEST_MAGIC, n,
            self.input_height, self.input_width, self.input_channels,
        )
        payload = np.ascontiguousarray(batch, dtype="<f4").tobytes()
        try:
            proc.stdin.write(header + payload)
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"scoring process died: {exc}") from exc

        offset = 0
        magic = self._read_exact(proc, 4, offset)
        offset += 4
        if magic != REPLY_MAGIC:
            raise ProtocolError(
                f"bad reply magic {magic!r}, expected {REPLY_MAGIC!r}", 0
            )
        head = self._read_exact(proc, 8, offset)
        reply_batch, reply_classes = struct.unpack("<II", head)
        offset += 8
        if reply_batch != n:
            raise ProtocolError(
                f"reply batch {reply_batch} does not match request {n}", 4
            )
        if reply_classes != self.n_classes:
            raise ProtocolError(
                f"reply n_classes {reply_classes} does not match declared "
                f"{self.n_classes}", 8
            )
        raw = self._read_exact(proc, 4 * n * self.n_classes, offset)
        scores = np.frombuffer(raw, dtype="<f4").reshape(n, self.n_classes)
        return scores.astype(np.float64)

    def _read_exact(self, proc, count, offset):
        data = proc.stdout.read(count)
        if data is None or len(data) != count:
            got = 0 if data is None else len(data)
            raise ProtocolError(
                f"truncated reply: wanted {count} bytes, got {got}",
                offset + got,
            )
        return data

    def close(self):
        """Signal EOF to the child and wait for it to exit."""
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class OnnxClassifier(ClassifierHandle):
    """Optional backend wrapping an ONNX model with a single image-batch
    input and a single score output. Requires the onnxruntime package."""

    backend = "onnx"

    def __init__(self, path, input_size, channels=1, n_classes=2,
                 max_batch=32, channels_first=True, cache_size=8192):
        try:
            import onnxruntime  # noqa: F401  (optional dependency)
        except ImportError as exc:
            raise RuntimeError(
                "the onnx backend requires the 'onnxruntime' package; "
                "install docxplain[onnx]"
            ) from exc
        super().__init__(input_size, channels, n_classes, max_batch,
                         cache_size)
        self.path = str(path)
        self.channels_first = channels_first
        self._session = onnxruntime.InferenceSession(self.path)
        inputs = self._session.get_inputs()
        outputs = self._session.get_outputs()
        if len(inputs) != 1 or len(outputs) != 1:
            raise ValueError("onnx model must have one input and one output")
        self._input_name = inputs[0].name

    def _score(self, batch):
        arr = batch.astype(np.float32)
        if self.channels_first:
            arr = np.transpose(arr, (0, 3, 1, 2))
        (scores,) = self._session.run(None, {self._input_name: arr})
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (batch.shape[0], self.n_classes):
            raise ValueError(
                f"onnx model returned shape {scores.shape}, expected "
                f"{(batch.shape[0], self.n_classes)}"
            )
        return scores
