"""Synthetic two-marker images whose label needs long-range reasoning.

Every image holds two 4x4 solid markers, each pure red or pure green, over
low-amplitude noise. The label is 0 when both markers share a color and 1
otherwise. Marker centers are at least 12 pixels apart (L1), so no single
local window can see both.

Sample ``i`` is a pure function of ``(i, seed)``; labels alternate with the
index, so any contiguous range of even length is exactly balanced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng

IMAGE_SIZE = 32
MARKER = 4
MIN_DISTANCE = 12
NOISE = 0.1
HELDOUT_OFFSET = 1 << 40

_COLORS = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=np.float32)


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray
    label: int
    corners: tuple
    colors: tuple

    def centers(self) -> tuple:
        half = (MARKER - 1) / 2
        return tuple((r + half, c + half) for r, c in self.corners)


def make_sample(index: int, seed: int) -> SynthSample:
    rng = Rng(seed, index)
    label = index % 2
    img = rng.uniform(0.0, NOISE, (IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    hi = IMAGE_SIZE - MARKER + 1
    while True:
        a = rng.integers(0, hi, 2)
        b = rng.integers(0, hi, 2)
        if abs(int(a[0]) - int(b[0])) + abs(int(a[1]) - int(b[1])) >= MIN_DISTANCE:
            break
    first = int(rng.integers(0, 2))
    second = first if label == 0 else 1 - first
    for (r, c), col in (((int(a[0]), int(a[1])), first), ((int(b[0]), int(b[1])), second)):
        img[r:r + MARKER, c:c + MARKER] = _COLORS[col]
    return SynthSample(img, label, ((int(a[0]), int(a[1])), (int(b[0]), int(b[1]))), (first, second))


def synth_dataset_generate(n: int, seed: int, start: int = 0) -> list[SynthSample]:
    if n < 1:
        raise ValueError("n must be at least 1")
    return [make_sample(start + i, seed) for i in range(n)]


def synth_batch(start: int, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Images [n, 32, 32, 3] (float32) and labels [n] for indices start..start+n-1."""
    samples = synth_dataset_generate(n, seed, start)
    return (np.stack([s.image for s in samples]),
            np.array([s.label for s in samples], dtype=np.int64))


def export_dataset(path, n: int, seed: int, start: int = 0) -> None:
    """Raw dump: a JSON manifest line, then images as little-endian f32 and labels as u8."""
    import json

    images, labels = synth_batch(start, n, seed)
    manifest = {"kind": "synth-markers", "n": n, "seed": seed, "start": start,
                "images": {"shape": list(images.shape), "dtype": "<f4"},
                "labels": {"shape": [n], "dtype": "u1"}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        fh.write(images.astype("<f4").tobytes())
        fh.write(labels.astype("u1").tobytes())
