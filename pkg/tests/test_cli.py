import csv
import io
import json
import subprocess
import sys

import pytest

from stepmerge.ablate import PRESETS, expand_grid, run_ablation_grid
from stepmerge.backbone import BackboneConfig
from stepmerge.bench import HEADER, run_benchmark
from stepmerge.cli import main
from stepmerge.config import RunConfig
from stepmerge.errors import ConfigError
from stepmerge.train import TrainConfig


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestRunConfig:
    def test_defaults_roundtrip(self):
        text = RunConfig().serialize()
        assert RunConfig.parse(text).serialize() == text

    def test_partial_roundtrip_is_canonical(self):
        cfg = RunConfig.parse('{"train": {"steps": 10}, "model": {"merge_modes": ["Conv2x2", "SPM"]}}')
        assert cfg.train.steps == 10 and cfg.model.merge_modes == ["Conv2x2", "SPM"]
        text = cfg.serialize()
        assert RunConfig.parse(text).serialize() == text
        assert list(json.loads(text)) == ["model", "train"]

    @pytest.mark.parametrize("text", ['{"model": {"colour": 1}}', '{"optim": {}}', '{"train": {"steps": 0}}',
                                      '{"model": {"guide_mode": "MAX"}}', "[1]", "{not json"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            RunConfig.parse(text)


class TestAblationGrid:
    @pytest.mark.parametrize("preset,n", [("guide", 3), ("gtg_kernel", 4), ("stages", 4), ("merge", 3),
                                          ("full", 11)])
    def test_cell_counts(self, preset, n):
        assert len(expand_grid(BackboneConfig(), PRESETS[preset])) == n

    def test_empty_grid_is_base(self):
        cells = expand_grid(BackboneConfig(), {})
        assert len(cells) == 1 and cells[0][1] == BackboneConfig()

    def test_product(self):
        cells = expand_grid(BackboneConfig(), {"guide_mode": ["CLS", "GAP"], "gtg_kernel": [3, 5, 7]})
        assert len(cells) == 6

    def test_kernel_sizes_axis_sets_heads(self):
        (_, cfg), = expand_grid(BackboneConfig(), {"kernel_sizes": [[3, 5]]})
        assert cfg.heads == 2 and cfg.kernel_sizes == [3, 5]

    @pytest.mark.parametrize("grid", [{"guide_mode": ["GTG", "MAX"]}, {"gtg_kernel": [3, 4]},
                                      {"stage_flags": [["SPM"]]}, {"colour": [1]}, {"gtg_kernel": []},
                                      {"kernel_sizes": [[3, 5, 7]]}])
    def test_invalid_before_training(self, grid, monkeypatch):
        import stepmerge.ablate as ab

        monkeypatch.setattr(ab, "train_loop", lambda *a, **k: pytest.fail("trained before validating"))
        with pytest.raises(ConfigError):
            run_ablation_grid(BackboneConfig(), [{"guide_mode": ["GTG"]}, grid], TrainConfig(steps=1))

    def test_rows(self, tmp_path):
        rows = run_ablation_grid(BackboneConfig(), {"guide_mode": ["CLS", "GAP"]}, TrainConfig(steps=3),
                                 seeds=(0,), eval_n=16, out_path=tmp_path / "a.csv")
        assert [r["guide_mode"] for r in rows] == ["CLS", "GAP"]
        assert all(r["params"] > 0 and 0 <= r["accuracy"] <= 1 for r in rows)
        assert (tmp_path / "a.csv").read_text().startswith("grid,guide_mode,gtg_kernel,")


class TestBench:
    def test_header_and_params(self):
        rows = run_benchmark(8, 16, size=4, batch=2, iters=2, warmup=1)
        assert tuple(rows[0]) == HEADER
        params = {r["mode"]: r["params"] for r in rows}
        assert params["Conv2x2"] == 2 * 2 * 8 * 16 + 16 == 528
        assert params == {r["mode"]: r["params"] for r in run_benchmark(8, 16, size=4, batch=2, iters=1, warmup=0)}
        assert all(r["fwd_tokens_per_s"] > 0 and r["fwdbwd_tokens_per_s"] > 0 for r in rows)

    def test_iters_positive(self):
        with pytest.raises(ValueError):
            run_benchmark(iters=0)


class TestCommands:
    def test_bench_cli(self, tmp_path, capsys):
        assert main(["bench", "--out", str(tmp_path), "--iters", "1", "--warmup", "0", "--size", "4",
                     "--batch", "2", "--modes", "Conv2x2"]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "mode,params,fwd_tokens_per_s,fwdbwd_tokens_per_s"
        assert rows_of(out)[0]["params"] == "528"
        assert (tmp_path / "bench.csv").exists()

    def test_gradcheck_cli(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path), "--guide-modes", "GAP"]) == 0
        rows = rows_of(capsys.readouterr().out)
        assert rows and all(r["pass"] == "1" for r in rows)

    def test_train_eval_erf(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text('{"train": {"steps": 4, "log_every": 2}}')
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out), "--eval-n", "16", "--seed", "1"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["heldout_n"] == 16
        assert json.loads((out / "config.json").read_text())["train"]["seed"] == 1
        assert (out / "metrics.csv").read_text().splitlines()[0] == "step,loss,lr,acc"

        assert main(["eval", str(out / "checkpoint.spm"), "--n", "16"]) == 0
        first = capsys.readouterr().out
        assert main(["eval", str(out / "checkpoint.spm"), "--n", "16"]) == 0
        assert capsys.readouterr().out == first

        assert main(["erf", "--checkpoint", str(out / "checkpoint.spm"), "--images", "2",
                     "--out", str(tmp_path / "e")]) == 0
        assert (tmp_path / "e" / "erf.ppm").read_bytes().startswith(b"P6\n32 32\n255\n")

    def test_erf_comparison_cli(self, tmp_path, capsys):
        assert main(["erf", "--seeds", "2", "--images", "2", "--out", str(tmp_path)]) == 0
        rows = rows_of(capsys.readouterr().out)
        assert [r["mode"] for r in rows] == ["SPM", "Conv2x2"]
        assert all(float(r["mean_radius"]) > 0 for r in rows)
        for name in ("erf_runs.csv", "erf_summary.csv", "erf_SPM.ppm", "erf_Conv2x2.ppm", "erf_SPM.csv"):
            assert (tmp_path / name).exists()

    def test_config_error_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"model": {"nope": 1}}')
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "nope" in capsys.readouterr().err

    def test_invalid_grid_exit_2(self, tmp_path):
        grid = tmp_path / "g.json"
        grid.write_text('{"gtg_kernel": [4]}')
        assert main(["ablate", "--grid", str(grid), "--out", str(tmp_path)]) == 2

    def test_numeric_error_exit_3(self, tmp_path):
        cfg = tmp_path / "hot.json"
        cfg.write_text('{"train": {"steps": 5, "lr": 1e30}}')
        with pytest.warns(RuntimeWarning):
            assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 3

    def test_io_error_exit_4(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == 4
        assert main(["eval", str(tmp_path / "missing.spm")]) == 4
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["bench", "--out", str(blocker / "sub"), "--iters", "1"]) == 4


def test_selftest_subprocess():
    proc = subprocess.run([sys.executable, "-m", "stepmerge", "selftest"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    lines = proc.stdout.splitlines()
    assert lines and all(l.startswith("PASS ") for l in lines)
