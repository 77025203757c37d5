"""Fast invariant checks bundled with the package (``stepmerge selftest``)."""

from __future__ import annotations

import itertools
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from . import conv, oracles
from .backbone import Backbone, BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ShapeError
from .gle import GLE, GleConfig
from .gradcheck import check_parameters, finite_diff_gradcheck
from .layers import Module
from .msa import MSA, MsaConfig
from .optim import cosine_lr
from .rng import Rng
from .spm import MergeBlock, SpmConfig
from .erf import compute_erf
from .tensor import ORACLE, Tensor, gelu, matmul, slice_axis, softmax

CHECKS: list[tuple[str, Callable[[int], tuple[bool, str]]]] = []


def check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def _t(a):
    return Tensor(np.asarray(a, dtype=ORACLE), dtype=ORACLE)


@check("matmul-oracle")
def _matmul(seed):
    rng = Rng(seed, 1)
    a, b = rng.normal((7, 5)), rng.normal((5, 3))
    err = np.abs(matmul(_t(a), _t(b)).data - oracles.matmul(a, b)).max()
    return err <= 1e-12, f"max abs diff {err:.2e}"


@check("dwconv-oracle")
def _dw(seed):
    rng = Rng(seed, 2)
    x, w, b = rng.normal((2, 6, 5, 3)), rng.normal((3, 3, 3)), rng.normal((3,))
    err = np.abs(conv.dwconv2d(_t(x), _t(w), _t(b)).data - oracles.dwconv2d(x, w, b)).max()
    return err <= 1e-12, f"max abs diff {err:.2e}"


@check("conv2x2-oracle")
def _merge(seed):
    rng = Rng(seed, 3)
    x, w, b = rng.normal((2, 4, 6, 3)), rng.normal((2, 2, 3, 5)), rng.normal((5,))
    err = np.abs(conv.conv2d_merge(_t(x), _t(w), _t(b)).data - oracles.conv2d(x, w, b, 2, 0)).max()
    return err <= 1e-12, f"max abs diff {err:.2e}"


@check("avgpool-oracle")
def _pool(seed):
    x = Rng(seed, 4).normal((2, 6, 4, 3))
    err = np.abs(conv.avgpool3x3_s2(_t(x)).data - oracles.avgpool3x3_s2(x)).max()
    return err <= 1e-12, f"max abs diff {err:.2e}"


@check("softmax-normalized")
def _softmax(seed):
    x = Rng(seed, 5).normal((4, 9), scale=10)
    err = np.abs(softmax(_t(x)).data.sum(-1) - 1).max()
    return err <= 1e-12, f"max row-sum error {err:.2e}"


@check("shuffle-window-bijections")
def _bij(seed):
    x = _t(Rng(seed, 6).normal((2, 8, 6, 6)))
    ok = np.array_equal(conv.channel_unshuffle(conv.channel_shuffle(x, 3), 3).data, x.data)
    w = conv.window_partition(x)
    ok &= w.shape == (2, 12, 4, 6)
    ok &= np.array_equal(conv.window_merge(w, 8, 6).data, x.data)
    return bool(ok), "shuffle and window partition invert exactly"


@check("msa-oracle")
def _msa(seed):
    cfg = MsaConfig(4, 8, heads=2)
    m = MSA(cfg, Rng(seed, 7)).to(ORACLE)
    for c in m.convs:
        c.bias.assign(Rng(seed, 8).normal(c.bias.shape))
    m.proj.bias.assign(Rng(seed, 9).normal(m.proj.bias.shape))
    x = Rng(seed, 10).normal((1, 5, 6, 4))
    ref = oracles.msa(x, [c.weight.data for c in m.convs], [c.bias.data for c in m.convs],
                      m.mix.data, m.proj.weight.data, m.proj.bias.data)
    err = np.abs(m(_t(x)).data - ref).max()
    return err <= 1e-12, f"max abs diff {err:.2e}"


@check("gle-attention-oracle")
def _gle(seed):
    g = GLE(GleConfig(4, guide_mode="GAP"), Rng(seed, 11)).to(ORACLE)
    x = Rng(seed, 12).normal((1, 2, 2, 4))
    toks = x.reshape(4, 4)
    z = np.concatenate([toks.mean(0, keepdims=True), toks])
    ref, _ = oracles.attention_guide_row(z, g.qkv.data)
    out = g(_t(x)).data.reshape(-1)
    err = np.abs(out - ref).max()
    worst = 0.0
    for perm in itertools.permutations(range(4)):
        xp = toks[list(perm)].reshape(1, 2, 2, 4)
        worst = max(worst, np.abs(g(_t(xp)).data.reshape(-1) - out).max())
    return err <= 1e-12 and worst <= 1e-12, f"oracle diff {err:.2e}, permutation diff {worst:.2e}"


@check("spm-gradcheck")
def _grad(seed):
    blk = MergeBlock(SpmConfig.build(4, 8, heads=2), Rng(seed, 13)).bind_names().to(ORACLE)
    x = _t(Rng(seed, 14).normal((1, 4, 4, 4)))
    r = _t(Rng(seed, 15).normal((1, 2, 2, 8)))
    rep = check_parameters(lambda: (blk(x) * r).sum(), blk.parameters(), [x])
    worst = max(rep.values())
    return worst < 1e-4, f"max relative error {worst:.2e} over {len(rep)} tensors"


@check("gelu-softmax-gradcheck")
def _small_grad(seed):
    x = Rng(seed, 16).uniform(-2, 2, (4,))
    e1 = finite_diff_gradcheck(lambda t: _first(softmax(t)), x)
    e2 = finite_diff_gradcheck(lambda t: gelu(t).sum(), x)
    return max(e1, e2) < 1e-6, f"softmax {e1:.2e}, gelu {e2:.2e}"


def _first(t: Tensor) -> Tensor:
    return slice_axis(t, 0, 1, axis=0).sum()


@check("shape-contract")
def _shapes(seed):
    for h, w in [(4, 4), (8, 4), (16, 8)]:
        blk = MergeBlock(SpmConfig.build(4, 8, heads=2), Rng(seed))
        y = blk(Tensor(np.zeros((1, h, w, 4), np.float32)))
        if y.shape != (1, h // 2, w // 2, 8):
            return False, f"{(h, w)} -> {y.shape}"
    try:
        blk(Tensor(np.zeros((1, 7, 8, 4), np.float32)))
    except ShapeError:
        return True, "even shapes halve, odd shapes rejected"
    return False, "odd input accepted"


@check("checkpoint-roundtrip")
def _ckpt(seed):
    model = Backbone(BackboneConfig(), seed=seed)
    x = Tensor(Rng(seed, 17).uniform(0, 1, (2, 32, 32, 3), dtype=np.float32))
    model.eval()
    before = model(x).data
    with tempfile.TemporaryDirectory() as d:
        path = save_checkpoint(model, Path(d) / "m.spm")
        loaded, _ = load_checkpoint(path)
    loaded.eval()
    same = all(np.array_equal(a.data, b.data) for a, b in zip(model.parameters(), loaded.parameters()))
    return same and np.array_equal(before, loaded(x).data), "bit-identical parameters and outputs"


@check("cosine-endpoints")
def _cos(seed):
    ok = abs(cosine_lr(0, 100, 1e-3) - 1e-3) <= 1e-12 and abs(cosine_lr(100, 100, 1e-3)) <= 1e-12
    return ok, "lr(0)=lr0, lr(T)=0"


@check("erf-single-conv")
def _erf(seed):
    class OneConv(Module):
        input_shape = (32, 32, 3)

        def __init__(self):
            self.w = Tensor(np.ones((3, 3, 3), np.float32))

        def tap(self, x, stage):
            return conv.dwconv2d(x, self.w)

    grid = compute_erf(OneConv(), 1, 4, seed).grid
    support = np.argwhere(grid > 0)
    ok = support.min(0).tolist() == [15, 15] and support.max(0).tolist() == [17, 17]
    return ok, f"support rows/cols {support.min(0).tolist()}..{support.max(0).tolist()}"


def run_selftest(seed: int = 0, echo=print) -> bool:
    ok_all = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn(seed)
        except Exception as e:  # a crashing check is a failing check
            ok, detail = False, f"{type(e).__name__}: {e}"
        ok_all &= bool(ok)
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok_all
