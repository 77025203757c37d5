"""End-to-end acceptance checks; each prints one PASS/FAIL line.

Criteria 6 and 8 train real models and take several minutes together.
"""

import csv
import itertools
import time

import numpy as np
import pytest

from stepmerge import oracles
from stepmerge.ablate import HEADER, PRESETS, run_ablation_grid
from stepmerge.backbone import Backbone, BackboneConfig
from stepmerge.checkpoint import load_checkpoint, load_into, save_checkpoint
from stepmerge.conv import avgpool3x3_s2, conv2d_merge, dwconv2d
from stepmerge.erf import erf_comparison
from stepmerge.errors import CheckpointError, ShapeError
from stepmerge.gle import GLE, GleConfig
from stepmerge.gradcheck import check_parameters
from stepmerge.msa import MSA, MsaConfig
from stepmerge.rng import Rng
from stepmerge.spm import MergeBlock, SpmConfig, spm_forward
from stepmerge.tensor import ORACLE, Tensor, matmul
from stepmerge.train import TrainConfig, evaluate_model, train_loop

from conftest import t64


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_1_oracle_equivalence(report):
    t0 = time.perf_counter()
    worst = {"dwconv2d": 0.0, "conv2d_merge": 0.0, "avgpool3x3_s2": 0.0, "matmul": 0.0}
    for case in range(20):
        r = Rng(case, 100)
        k = 2 * int(r.integers(0, 4)) + 1
        x, w, b = r.normal((2, 8, 6, 3)), r.normal((k, k, 3)), r.normal((3,))
        worst["dwconv2d"] = max(worst["dwconv2d"], np.abs(
            dwconv2d(t64(x), t64(w), t64(b)).data - oracles.dwconv2d(x, w, b)).max())
        w2, b2 = r.normal((2, 2, 3, 5)), r.normal((5,))
        worst["conv2d_merge"] = max(worst["conv2d_merge"], np.abs(
            conv2d_merge(t64(x), t64(w2), t64(b2)).data - oracles.conv2d(x, w2, b2, 2, 0)).max())
        worst["avgpool3x3_s2"] = max(worst["avgpool3x3_s2"], np.abs(
            avgpool3x3_s2(t64(x)).data - oracles.avgpool3x3_s2(x)).max())
        a, m = r.normal((int(r.integers(1, 9)), 7)), r.normal((7, int(r.integers(1, 9))))
        worst["matmul"] = max(worst["matmul"], np.abs(matmul(t64(a), t64(m)).data - oracles.matmul(a, m)).max())
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-12 and elapsed < 60
    report(1, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.2f}s")


def test_2_msa_structure(report):
    cfg = MsaConfig(8, 12, heads=4)
    m = MSA(cfg, Rng(0)).bind_names().to(ORACLE)
    r = Rng(0, 1)
    for c in m.convs:
        c.bias.assign(r.normal(c.bias.shape))
    m.proj.bias.assign(r.normal(m.proj.bias.shape))
    x = r.normal((2, 6, 6, 8))
    ref = oracles.msa(x, [c.weight.data for c in m.convs], [c.bias.data for c in m.convs],
                      m.mix.data, m.proj.weight.data, m.proj.bias.data)
    oracle_err = np.abs(m(t64(x)).data - ref).max()

    lin = 0.0
    for seed in range(5):
        m32 = MSA(MsaConfig(8, 16, heads=4), Rng(seed))
        rs = Rng(seed, 2)
        a = rs.normal((2, 8, 8, 8)).astype(np.float32)
        b = rs.normal((2, 8, 8, 8)).astype(np.float32)
        lhs = m32(Tensor(0.6 * a - 1.7 * b)).data
        rhs = 0.6 * m32(Tensor(a)).data - 1.7 * m32(Tensor(b)).data
        lin = max(lin, np.abs(lhs - rhs).max() / np.abs(rhs).max())
    report(2, oracle_err <= 1e-12 and lin <= 1e-5, f"oracle {oracle_err:.1e}, linearity rel {lin:.1e}")


def test_3_gle_fidelity(report):
    g = GLE(GleConfig(8, guide_mode="GTG"), Rng(1)).to(ORACLE)
    x = Rng(1, 1).normal((1, 2, 2, 8))
    z = g.sequences(t64(x)).data.reshape(5, 8)
    ref, _ = oracles.attention_guide_row(z, g.qkv.data)
    oracle_err = np.abs(g(t64(x)).data.reshape(8) - ref).max()

    perm_err = 0.0
    for mode in ("CLS", "GAP"):
        gm = GLE(GleConfig(8, guide_mode=mode), Rng(2)).to(ORACLE)
        toks = Rng(2, 1).normal((4, 8))
        base = gm(t64(toks.reshape(1, 2, 2, 8))).data
        for perm in itertools.permutations(range(4)):
            perm_err = max(perm_err, np.abs(gm(t64(toks[list(perm)].reshape(1, 2, 2, 8))).data - base).max())

    counts = []
    for h, w in itertools.product([2, 4, 8, 16], repeat=2):
        gw = GLE(GleConfig(4), Rng(0))
        _, attn = gw(Tensor(Rng(3).normal((1, h, w, 4), dtype=np.float32)), return_attention=True)
        counts.append(attn.shape[1] == h * w // 4)
    ok = oracle_err <= 1e-12 and perm_err <= 1e-12 and all(counts)
    report(3, ok, f"oracle {oracle_err:.1e}, 24-permutation max diff {perm_err:.1e}, "
                  f"window counts {sum(counts)}/{len(counts)}")


def test_4_gradient_correctness(report):
    t0 = time.perf_counter()
    blk = MergeBlock(SpmConfig.build(4, 8, heads=2), Rng(0)).bind_names().to(ORACLE)
    x = t64(Rng(0, 1).normal((1, 4, 4, 4)))
    r = t64(Rng(0, 2).normal((1, 2, 2, 8)))
    rep = check_parameters(lambda: (blk(x) * r).sum(), blk.parameters(), [x])
    elapsed = time.perf_counter() - t0
    worst = max(rep, key=rep.get)
    ok = rep[worst] < 1e-4 and len(rep) == len(blk.parameters()) + 1 and elapsed < 300
    report(4, ok, f"{len(rep)} tensors, worst {worst} {rep[worst]:.1e}; {elapsed:.1f}s")


def test_5_shape_contract(report):
    bad = []
    for (h, w), c, c_out, n in itertools.product(itertools.product([4, 8, 16], repeat=2), [4, 8], [8, 16], [1, 2, 4]):
        cfg = SpmConfig.build(c, c_out, heads=n)
        y = spm_forward(Tensor(np.zeros((1, h, w, c), np.float32)), cfg, MergeBlock(cfg, Rng(0)))
        if y.shape != (1, h // 2, w // 2, c_out):
            bad.append((h, w, c, c_out, n, y.shape))
    rejected = 0
    for hw in [(5, 4), (4, 7), (9, 9)]:
        try:
            MergeBlock(SpmConfig.build(4, 8), Rng(0))(Tensor(np.zeros((1, *hw, 4), np.float32)))
        except ShapeError:
            rejected += 1
    report(5, not bad and rejected == 3, f"72 configs, {len(bad)} wrong shapes, odd dims rejected {rejected}/3")


def test_6_toy_training(report, tmp_path):
    t0 = time.perf_counter()
    first = train_loop(BackboneConfig(), TrainConfig(seed=0), out_dir=tmp_path)
    acc, _ = evaluate_model(first.model, 512, 0)
    second = train_loop(BackboneConfig(), TrainConfig(seed=0))
    elapsed = time.perf_counter() - t0
    same = first.losses == second.losses
    ok = (first.final_loss < 0.5 * first.initial_loss and acc >= 0.90 and same
          and len(first.losses) == 2000 and elapsed < 1800)
    report(6, ok, f"loss {first.initial_loss:.4f} -> {first.final_loss:.2e}, held-out acc {acc:.3f} (n=512), "
                  f"identical curves {same}; two runs {elapsed:.0f}s")


def test_7_erf_comparison(report, tmp_path):
    rows, _ = erf_comparison(BackboneConfig(), ("SPM", "Conv2x2"), range(8), m=64, stage=2)
    means = {mode: float(np.mean([r["radius"] for r in rows if r["mode"] == mode])) for mode in ("SPM", "Conv2x2")}
    path = tmp_path / "erf_summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "mean_radius"])
        for mode, v in means.items():
            w.writerow([mode, repr(v)])
    text = path.read_text()
    ok = means["SPM"] > means["Conv2x2"] and text.count("\n") == 3
    report(7, ok, "mean radius " + text.strip().replace("\n", "; "))


def test_8_ablation_grid(report):
    rows = run_ablation_grid(BackboneConfig(), PRESETS["full"], TrainConfig(steps=500), seeds=(0,), eval_n=512)
    groups = [r["grid"] for r in rows]
    shape_ok = (groups.count("guide_mode") == 3 and groups.count("gtg_kernel") == 4
                and groups.count("stage_flags") == 4 and len(rows) == 11)
    finite = all(np.isfinite(r["final_loss"]) and r["params"] > 0 and 0 <= r["accuracy"] <= 1 for r in rows)
    axis_column = {"guide_mode": "guide_mode", "gtg_kernel": "gtg_kernel", "stage_flags": "merge_modes"}
    table = "; ".join(f"{r['grid']}={r[axis_column[r['grid']]]} acc {r['accuracy']:.3f} params {r['params']}" for r in rows)
    report(8, shape_ok and finite and set(HEADER) <= set(rows[0]), f"{len(rows)} cells; {table}")


def test_9_serialization(report, tmp_path):
    model = Backbone(BackboneConfig(), seed=4)
    path = save_checkpoint(model, tmp_path / "m.spm")
    loaded, _ = load_checkpoint(path)
    params_same = all(a.data.tobytes() == b.data.tobytes() for a, b in zip(model.parameters(), loaded.parameters()))
    x = Tensor(Rng(9).uniform(0, 1, (4, 32, 32, 3), dtype=np.float32))
    model.eval()
    loaded.eval()
    out_same = model(x).data.tobytes() == loaded(x).data.tobytes()

    blob = path.read_bytes()
    rejected = 0
    for name, bad in (("magic", b"XXXXXXXX" + blob[8:]), ("payload", blob[:-7])):
        p = tmp_path / f"{name}.spm"
        p.write_bytes(bad)
        try:
            load_into(Backbone(BackboneConfig(), seed=4), p)
        except CheckpointError:
            rejected += 1
    ok = params_same and out_same and rejected == 2
    report(9, ok, f"params bit-identical {params_same}, outputs bit-identical {out_same}, corruptions rejected {rejected}/2")
