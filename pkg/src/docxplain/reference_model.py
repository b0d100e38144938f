"""Reference scoring process for the batch wire protocol.

Run as ``python -m docxplain.reference_model [--classes N]``. Reads
score requests from stdin and answers with a deterministic per-image
statistic vector: class j carries the mean of the j+1-th power of the
pixel values, computed in float32 so replies are bit-stable across runs
and machines. Exits cleanly on EOF.
"""

from __future__ import annotations

import argparse
import struct
import sys

import numpy as np

from .model import REPLY_MAGIC, REQUEST_MAGIC


def _read_exact(stream, count: int) -> bytes | None:
    data = stream.read(count)
    if not data:
        return None
    while len(data) < count:
        more = stream.read(count - len(data))
        if not more:
            raise IOError(f"truncated request: wanted {count} bytes, got {len(data)}")
        data += more
    return data


def score_request(images: np.ndarray, n_classes: int) -> np.ndarray:
    """Deterministic float32 moment vector per image."""
    flat = images.reshape(images.shape[0], -1).astype(np.float32)
    cols = [flat.mean(axis=1)]
    for power in range(2, n_classes + 1):
        cols.append((flat ** np.float32(power)).mean(axis=1))
    return np.stack(cols, axis=1).astype(np.float32)


def serve(stdin, stdout, n_classes: int) -> None:
    while True:
        header = _read_exact(stdin, 20)
        if header is None:
            return
        magic, batch, h, w, c = struct.unpack("<4sIIII", header)
        if magic != REQUEST_MAGIC:
            raise IOError(f"bad request magic {magic!r}")
        payload = _read_exact(stdin, 4 * batch * h * w * c)
        if payload is None:
            raise IOError("request truncated before pixel payload")
        images = np.frombuffer(payload, dtype="<f4").reshape(batch, h, w, c)
        scores = score_request(images, n_classes)
        stdout.write(struct.pack("<4sII", REPLY_MAGIC, batch, n_classes))
        stdout.write(np.ascontiguousarray(scores, dtype="<f4").tobytes())
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--classes", type=int, default=2)
    args = parser.parse_args(argv)
    if args.classes < 2:
        parser.error("--classes must be >= 2")
    serve(sys.stdin.buffer, sys.stdout.buffer, args.classes)
    return 0


if __name__ == "__main__":
    sys.exit(main())
