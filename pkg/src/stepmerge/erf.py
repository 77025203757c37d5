"""Effective receptive field maps.

For each input image, the center spatial unit of a tapped feature map
(summed over channels) is back-propagated to the input; absolute input
gradients are summed over input channels and averaged over images, then
normalized to a maximum of 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig
from .data import synth_batch
from .errors import ConfigError, FileError
from .tensor import Tape, Tensor, backward, slice_axis


@dataclass
class ErfMap:
    grid: np.ndarray
    stage: int
    images: int
    seed: int


def compute_erf(model, stage: int, m: int = 64, seed: int = 0, batch: int = 64) -> ErfMap:
    """``model`` needs ``tap(x, stage)`` and ``input_shape`` (H, W, C).

    The model runs in eval mode so images in a batch cannot interact.
    """
    if m < 1:
        raise ConfigError("need at least one image")
    h, w, c = model.input_shape
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    acc = np.zeros((h, w), dtype=np.float64)
    try:
        for start in range(0, m, batch):
            n = min(batch, m - start)
            images, _ = synth_batch(start, n, seed)
            if images.shape[1:] != (h, w, c):
                raise ConfigError(f"model input {model.input_shape} does not match the dataset images")
            x = Tensor(images, requires_grad=True)
            with Tape() as tape:
                y = model.tap(x, stage)
                if y.shape[1] < 1 or y.shape[2] < 1:
                    raise ConfigError(f"stage {stage} has an empty spatial grid")
                cy, cx = y.shape[1] // 2, y.shape[2] // 2
                unit = slice_axis(slice_axis(y, cy, cy + 1, axis=1), cx, cx + 1, axis=2)
                total = unit.sum()
            if total.requires_grad:
                backward(tape, total)
                acc += np.abs(x.grad.astype(np.float64)).sum(axis=-1).sum(axis=0)
    finally:
        if hasattr(model, "train"):
            model.train(was_training)
    acc /= m
    peak = acc.max()
    grid = acc / peak if peak > 0 else acc
    return ErfMap(grid, stage, m, seed)


def erf_radius(erf, threshold: float = 0.2) -> float:
    """sqrt(area / pi), area = cells strictly above ``threshold * max``."""
    if not 0 < threshold < 1:
        raise ConfigError("threshold must be in (0, 1)")
    grid = erf.grid if isinstance(erf, ErfMap) else np.asarray(erf)
    peak = grid.max(initial=0.0)
    if peak <= 0:
        return 0.0
    return math.sqrt(np.count_nonzero(grid > threshold * peak) / math.pi)


def emit_ppm(erf, path) -> Path:
    """Binary P6 grayscale heatmap."""
    grid = erf.grid if isinstance(erf, ErfMap) else np.asarray(erf)
    h, w = grid.shape
    v = np.clip(np.rint(255 * np.clip(grid, 0, 1)), 0, 255).astype(np.uint8)
    rgb = np.repeat(v[:, :, None], 3, axis=2)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(rgb.tobytes())
    except OSError as e:
        raise FileError(f"cannot write {path}: {e}") from e
    return path


def read_ppm(path) -> np.ndarray:
    """Read a P6 file written by :func:`emit_ppm` back into a [0, 1] grid (red channel)."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise FileError(f"{path}: not a P6 file")
    w, h = (int(t) for t in parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size != h * w * 3:
        raise FileError(f"{path}: expected {h * w * 3} pixel bytes, found {pix.size}")
    return pix.reshape(h, w, 3)[:, :, 0] / 255.0


def write_grid_csv(erf, path) -> Path:
    grid = erf.grid if isinstance(erf, ErfMap) else np.asarray(erf)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid:
            w.writerow([repr(float(v)) for v in row])
    return path


def erf_comparison(base: BackboneConfig, modes=("SPM", "Conv2x2"), seeds=range(8),
                   m: int = 64, stage: int = 2, threshold: float = 0.2):
    """Random-init ERF radius per (mode, seed) with both merge points set to ``mode``.

    Returns (rows, mean maps per mode). Each row: mode, seed, radius.
    """
    rows, maps = [], {}
    for mode in modes:
        cfg = replace(base, merge_modes=[mode] * len(base.merge_modes))
        total = np.zeros((base.image_size, base.image_size))
        for seed in seeds:
            erf = compute_erf(Backbone(cfg, seed=seed), stage, m, seed)
            rows.append({"mode": mode, "seed": seed, "radius": erf_radius(erf, threshold)})
            total += erf.grid
        peak = total.max()
        maps[mode] = ErfMap(total / peak if peak > 0 else total, stage, m, -1)
    return rows, maps
