"""Throughput of a single merge block, per merge mode."""

from __future__ import annotations

import time

import numpy as np

from .rng import Rng
from .spm import MERGE_MODES, MergeBlock, SpmConfig
from .tensor import Tape, Tensor, backward

HEADER = ("mode", "params", "fwd_tokens_per_s", "fwdbwd_tokens_per_s")


def run_benchmark(c: int = 8, c_out: int = 16, size: int = 8, batch: int = 32,
                  modes=MERGE_MODES, iters: int = 20, warmup: int = 3, seed: int = 0,
                  heads: int = 4) -> list[dict]:
    if iters < 1:
        raise ValueError("iters must be at least 1")
    x = Tensor(Rng(seed, 7).normal((batch, size, size, c), dtype=np.float32))
    tokens = batch * size * size
    rows = []
    for mode in modes:
        block = MergeBlock(SpmConfig.build(c, c_out, heads=heads, merge_mode=mode), Rng(seed))
        fwd, fwdbwd = [], []
        for i in range(warmup + iters):
            t0 = time.perf_counter()
            block(x)
            t1 = time.perf_counter()
            with Tape() as tape:
                loss = block(x).sum()
            backward(tape, loss)
            t2 = time.perf_counter()
            if i >= warmup:
                fwd.append(t1 - t0)
                fwdbwd.append(t2 - t1)
        rows.append({
            "mode": mode,
            "params": block.num_parameters(),
            "fwd_tokens_per_s": tokens / float(np.median(fwd)),
            "fwdbwd_tokens_per_s": tokens / float(np.median(fwdbwd)),
        })
    return rows
