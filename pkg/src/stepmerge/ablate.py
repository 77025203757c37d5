"""Ablation grids over the merge-block design choices."""

from __future__ import annotations

import csv
import itertools
from dataclasses import replace

import numpy as np

from .backbone import BackboneConfig
from .errors import ConfigError
from .gle import GUIDE_MODES
from .spm import MERGE_MODES
from .train import TrainConfig, evaluate_model, train_loop

AXES = ("guide_mode", "gtg_kernel", "merge_mode", "stage_flags", "kernel_sizes")

PRESETS = {
    "guide": {"guide_mode": ["GTG", "CLS", "GAP"]},
    "gtg_kernel": {"gtg_kernel": [3, 5, 7, 9]},
    "stages": {"stage_flags": [["Conv2x2", "Conv2x2"], ["SPM", "Conv2x2"],
                               ["Conv2x2", "SPM"], ["SPM", "SPM"]]},
    "merge": {"merge_mode": ["SPM", "Conv2x2", "AvgPool3x3"]},
}
PRESETS["full"] = [PRESETS["guide"], PRESETS["gtg_kernel"], PRESETS["stages"]]

HEADER = ("grid", "guide_mode", "gtg_kernel", "merge_modes", "heads", "kernel_sizes", "steps",
          "seeds", "params", "merge_params", "final_loss", "accuracy")


def _apply(base: BackboneConfig, axis: str, value) -> BackboneConfig:
    n_merge = len(base.merge_modes)
    if axis == "guide_mode":
        if value not in GUIDE_MODES:
            raise ConfigError(f"guide_mode value {value!r} not in {GUIDE_MODES}")
        return replace(base, guide_mode=value)
    if axis == "gtg_kernel":
        if not isinstance(value, int) or value < 1 or value % 2 == 0:
            raise ConfigError(f"gtg_kernel value {value!r} must be an odd positive integer")
        return replace(base, gtg_kernel=value)
    if axis == "merge_mode":
        if value not in MERGE_MODES:
            raise ConfigError(f"merge_mode value {value!r} not in {MERGE_MODES}")
        return replace(base, merge_modes=[value] * n_merge)
    if axis == "stage_flags":
        if not isinstance(value, (list, tuple)) or len(value) != n_merge:
            raise ConfigError(f"stage_flags value {value!r} needs {n_merge} merge modes")
        return replace(base, merge_modes=list(value))
    if axis == "kernel_sizes":
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"kernel_sizes value {value!r} must be a list")
        return replace(base, kernel_sizes=list(value), heads=len(value))
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {AXES}")


def expand_grid(base: BackboneConfig, grid) -> list[tuple[str, BackboneConfig]]:
    """Cartesian product of each grid's axes; a list of grids is concatenated.

    Every cell is validated here, before anything trains.
    """
    grids = grid if isinstance(grid, list) else [grid or {}]
    cells = []
    for g in grids:
        if not isinstance(g, dict):
            raise ConfigError("a grid must map axis names to value lists")
        axes = list(g)
        for axis in axes:
            if axis not in AXES:
                raise ConfigError(f"unknown ablation axis {axis!r}; choose from {AXES}")
            if not isinstance(g[axis], list) or not g[axis]:
                raise ConfigError(f"axis {axis!r} needs a non-empty list of values")
        name = "+".join(axes) or "base"
        for combo in itertools.product(*(g[a] for a in axes)):
            cfg = base
            for axis, value in zip(axes, combo):
                cfg = _apply(cfg, axis, value)
            cfg = BackboneConfig(**cfg.to_dict())
            cells.append((name, cfg))
    return cells


def run_ablation_grid(base: BackboneConfig, grid, tcfg: TrainConfig, seeds=(0,),
                      eval_n: int = 512, out_path=None, progress=None) -> list[dict]:
    cells = expand_grid(base, grid)
    rows = []
    for name, cfg in cells:
        losses, accs, params, merge_params = [], [], None, None
        for seed in seeds:
            result = train_loop(cfg, replace(tcfg, seed=seed))
            acc, _ = evaluate_model(result.model, eval_n, seed)
            losses.append(result.final_loss)
            accs.append(acc)
            params = result.model.num_parameters()
            merge_params = result.model.merge_parameter_count()
        row = {
            "grid": name, "guide_mode": cfg.guide_mode, "gtg_kernel": cfg.gtg_kernel,
            "merge_modes": "|".join(cfg.merge_modes), "heads": cfg.heads,
            "kernel_sizes": "|".join(map(str, cfg.kernel_sizes or [])),
            "steps": tcfg.steps, "seeds": "|".join(map(str, seeds)),
            "params": params, "merge_params": merge_params,
            "final_loss": float(np.mean(losses)), "accuracy": float(np.mean(accs)),
        }
        rows.append(row)
        if progress:
            progress(row)
    if out_path is not None:
        write_rows(rows, HEADER, out_path)
    return rows


def write_rows(rows, header, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
