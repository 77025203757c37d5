"""Command-line entry point: ``stepmerge <command> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FileError, NumericError, SpmError

log = logging.getLogger("stepmerge")


def _load_config(args):
    from .config import RunConfig

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FileError(f"cannot create output directory {out}: {e}") from e
    return out


def _emit_csv(rows, header, path: Path | None):
    w = csv.DictWriter(sys.stdout, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if path is not None:
        with open(path, "w", newline="") as fh:
            fw = csv.DictWriter(fh, fieldnames=list(header), lineterminator="\n")
            fw.writeheader()
            fw.writerows(rows)


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(args.seed or 0) else 3


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_parameters
    from .rng import Rng
    from .spm import MergeBlock, SpmConfig
    from .tensor import ORACLE, Tensor

    seed = args.seed or 0
    rows = []
    for mode in args.guide_modes:
        cfg = SpmConfig.build(4, 8, heads=2, guide_mode=mode)
        blk = MergeBlock(cfg, Rng(seed)).bind_names().to(ORACLE)
        x = Tensor(Rng(seed, 1).normal((1, 4, 4, 4)), dtype=ORACLE)
        r = Tensor(Rng(seed, 2).normal((1, 2, 2, 8)), dtype=ORACLE)
        report = check_parameters(lambda: (blk(x) * r).sum(), blk.parameters(), [x])
        for name, err in report.items():
            rows.append({"guide_mode": mode, "tensor": name, "max_rel_err": err,
                         "pass": int(err < args.tol)})
    _emit_csv(rows, ("guide_mode", "tensor", "max_rel_err", "pass"), _out_dir(args) / "gradcheck.csv")
    return 0 if all(r["pass"] for r in rows) else 3


def cmd_train(args) -> int:
    from .train import evaluate_model, train_loop

    cfg = _load_config(args)
    if args.steps:
        cfg.train = replace(cfg.train, steps=args.steps)
    out = _out_dir(args)
    (out / "config.json").write_text(cfg.serialize())
    result = train_loop(cfg.model, cfg.train, out_dir=out)
    acc, loss = evaluate_model(result.model, args.eval_n, cfg.train.seed)
    summary = {
        "initial_loss": result.initial_loss, "final_loss": result.final_loss,
        "heldout_accuracy": acc, "heldout_loss": loss, "heldout_n": args.eval_n,
        "params": result.model.num_parameters(),
        "merge_params": result.model.merge_parameter_count(),
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate

    acc, loss = evaluate(args.checkpoint, args.n, args.seed or 0)
    _emit_csv([{"n": args.n, "seed": args.seed or 0, "accuracy": acc, "loss": loss}],
              ("n", "seed", "accuracy", "loss"), None)
    return 0


def cmd_erf(args) -> int:
    from .erf import compute_erf, emit_ppm, erf_comparison, erf_radius, write_grid_csv

    out = _out_dir(args)
    seed = args.seed or 0
    if args.checkpoint:
        from .checkpoint import load_checkpoint

        model, _ = load_checkpoint(args.checkpoint)
        erf = compute_erf(model, args.stage, args.images, seed)
        emit_ppm(erf, out / "erf.ppm")
        write_grid_csv(erf, out / "erf_grid.csv")
        _emit_csv([{"stage": args.stage, "images": args.images, "seed": seed,
                    "radius": erf_radius(erf, args.threshold)}],
                  ("stage", "images", "seed", "radius"), out / "erf_summary.csv")
        return 0
    cfg = _load_config(args)
    seeds = list(range(seed, seed + args.seeds))
    rows, maps = erf_comparison(cfg.model, args.modes, seeds, args.images, args.stage, args.threshold)
    with open(out / "erf_runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["mode", "seed", "radius"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    summary = []
    for mode in args.modes:
        radii = [r["radius"] for r in rows if r["mode"] == mode]
        summary.append({"mode": mode, "stage": args.stage, "images": args.images, "seeds": len(radii),
                        "mean_radius": float(np.mean(radii))})
        emit_ppm(maps[mode], out / f"erf_{mode}.ppm")
        write_grid_csv(maps[mode], out / f"erf_{mode}.csv")
    _emit_csv(summary, ("mode", "stage", "images", "seeds", "mean_radius"), out / "erf_summary.csv")
    return 0


def cmd_ablate(args) -> int:
    from .ablate import HEADER, PRESETS, run_ablation_grid

    cfg = _load_config(args)
    if args.grid:
        try:
            grid = json.loads(Path(args.grid).read_text())
        except OSError as e:
            raise FileError(f"cannot read grid {args.grid}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"grid is not valid JSON: {e}") from e
    else:
        grid = PRESETS[args.preset]
    tcfg = replace(cfg.train, steps=args.steps) if args.steps else cfg.train
    seeds = args.seeds or [cfg.train.seed]
    out = _out_dir(args)
    rows = run_ablation_grid(cfg.model, grid, tcfg, seeds, args.eval_n,
                             progress=lambda r: log.info("cell done: %s", r))
    _emit_csv(rows, HEADER, out / "ablation.csv")
    return 0


def cmd_bench(args) -> int:
    from .bench import HEADER, run_benchmark

    rows = run_benchmark(args.channels, args.out_channels, args.size, args.batch, args.modes,
                         args.iters, args.warmup, args.seed or 0, args.heads)
    _emit_csv(rows, HEADER, _out_dir(args) / "bench.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    from .ablate import PRESETS
    from .spm import MERGE_MODES

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--seed", type=int, default=None, help="seed (u64)")
    common.add_argument("--out", default="spm-out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="stepmerge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("selftest", parents=[common], help="run the bundled invariant checks")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the SPM block")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--guide-modes", nargs="+", default=["GTG", "CLS", "GAP"])

    s = sub.add_parser("train", parents=[common], help="train the toy backbone")
    s.add_argument("--steps", type=int, default=None, help="override train.steps")
    s.add_argument("--eval-n", type=int, default=512)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on held-out samples")
    s.add_argument("checkpoint")
    s.add_argument("--n", type=int, default=512)

    s = sub.add_parser("erf", parents=[common], help="effective receptive field maps and radii")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--modes", nargs="+", default=["SPM", "Conv2x2"], choices=MERGE_MODES)
    s.add_argument("--seeds", type=int, default=8, help="number of random-init seeds")
    s.add_argument("--images", type=int, default=64)
    s.add_argument("--stage", type=int, default=2)
    s.add_argument("--threshold", type=float, default=0.2)

    s = sub.add_parser("ablate", parents=[common], help="train/evaluate an ablation grid")
    s.add_argument("--preset", choices=sorted(PRESETS), default="full")
    s.add_argument("--grid", default=None, help="JSON grid (object or list of objects)")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--seeds", type=int, nargs="+", default=None)
    s.add_argument("--eval-n", type=int, default=512)

    s = sub.add_parser("bench", parents=[common], help="merge-block throughput")
    s.add_argument("--modes", nargs="+", default=list(MERGE_MODES), choices=MERGE_MODES)
    s.add_argument("--iters", type=int, default=20)
    s.add_argument("--warmup", type=int, default=3)
    s.add_argument("--channels", type=int, default=8)
    s.add_argument("--out-channels", type=int, default=16)
    s.add_argument("--size", type=int, default=8)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--heads", type=int, default=4)
    return p


COMMANDS = {
    "selftest": cmd_selftest, "gradcheck": cmd_gradcheck, "train": cmd_train, "eval": cmd_eval,
    "erf": cmd_erf, "ablate": cmd_ablate, "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SpmError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except FloatingPointError as e:
        print(f"error: {e}", file=sys.stderr)
        return NumericError.exit_code


if __name__ == "__main__":
    sys.exit(main())
