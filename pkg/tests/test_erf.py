import math

import numpy as np
import pytest

from stepmerge.backbone import Backbone, BackboneConfig
from stepmerge.conv import avgpool3x3_s2, conv2d_merge, dwconv2d
from stepmerge.erf import ErfMap, compute_erf, emit_ppm, erf_comparison, erf_radius, read_ppm, write_grid_csv
from stepmerge.errors import ConfigError
from stepmerge.layers import Module
from stepmerge.tensor import Tensor


class Chain(Module):
    """Fixed all-ones conv chain; ``ops`` is a list of (kind, kernel, stride)."""

    input_shape = (32, 32, 3)

    def __init__(self, ops):
        self.ops = ops

    def tap(self, x, stage):
        for kind, k, s in self.ops:
            if kind == "dw":
                x = dwconv2d(x, Tensor(np.ones((k, k, 3), np.float32)), stride=s)
            elif kind == "merge":
                x = conv2d_merge(x, Tensor(np.ones((2, 2, 3, 3), np.float32)))
            else:
                x = avgpool3x3_s2(x)
        return x


def box(ops, size=32):
    """Analytic receptive field of the centre output unit, as inclusive (lo, hi) per axis."""
    out = size
    for kind, k, s in ops:
        out = (out + 2 * (k // 2) - k) // s + 1 if kind != "merge" else out // 2
    lo = hi = out // 2
    for kind, k, s in reversed(ops):
        pad = 0 if kind == "merge" else k // 2
        lo, hi = lo * s - pad, hi * s - pad + k - 1
    return max(lo, 0), min(hi, size - 1)


CHAINS = [
    [("dw", 3, 1)],
    [("dw", 5, 1), ("merge", 2, 2), ("dw", 3, 1)],
    [("dw", 3, 1), ("pool", 3, 2), ("dw", 7, 1), ("merge", 2, 2)],
]


def test_single_conv_center_3x3():
    grid = compute_erf(Chain([("dw", 3, 1)]), 1, m=4, seed=0).grid
    support = np.zeros_like(grid, dtype=bool)
    support[15:18, 15:18] = True
    assert (grid[support] > 0).all() and (grid[~support] == 0).all()
    assert grid.max() == 1.0


@pytest.mark.parametrize("ops", CHAINS)
def test_zero_outside_analytic_box(ops):
    grid = compute_erf(Chain(ops), 1, m=3, seed=1).grid
    lo, hi = box(ops)
    inside = np.zeros_like(grid, dtype=bool)
    inside[lo:hi + 1, lo:hi + 1] = True
    assert (grid[~inside] == 0).all()
    # the box is tight: its corners are reached
    assert grid[lo, lo] > 0 and grid[hi, hi] > 0


def test_backbone_map_normalized_and_deterministic():
    m = Backbone(BackboneConfig(), seed=0)
    a = compute_erf(m, 2, m=8, seed=3)
    b = compute_erf(m, 2, m=8, seed=3)
    assert a.grid.shape == (32, 32) and a.grid.max() == 1.0 and a.grid.min() >= 0
    assert a.grid.tobytes() == b.grid.tobytes()
    assert m.training  # mode restored


def test_stage_out_of_range():
    with pytest.raises(ConfigError):
        compute_erf(Backbone(BackboneConfig()), 0, m=2)
    with pytest.raises(ConfigError):
        compute_erf(Backbone(BackboneConfig()), 1, m=0)


class TestRadius:
    def test_zero_map(self):
        assert erf_radius(np.zeros((8, 8))) == 0.0

    def test_single_cell(self):
        g = np.zeros((8, 8))
        g[3, 4] = 1
        assert erf_radius(g) == pytest.approx(math.sqrt(1 / math.pi)) == pytest.approx(0.564, abs=1e-3)

    def test_disk(self):
        yy, xx = np.mgrid[:32, :32]
        g = ((yy - 15.5) ** 2 + (xx - 15.5) ** 2 <= 25).astype(float)
        assert abs(erf_radius(ErfMap(g, 1, 1, 0)) - 5) <= 0.5

    def test_monotone_in_threshold(self):
        g = np.random.default_rng(0).random((32, 32))
        radii = [erf_radius(g, t) for t in np.linspace(0.05, 0.95, 19)]
        assert all(a >= b for a, b in zip(radii, radii[1:]))

    @pytest.mark.parametrize("t", [0, 1, -0.1, 1.5])
    def test_threshold_domain(self, t):
        with pytest.raises(ConfigError):
            erf_radius(np.ones((2, 2)), t)


class TestPpm:
    def test_header_and_endpoints(self, tmp_path):
        g = np.zeros((32, 32))
        g[0, 1] = 1
        blob = emit_ppm(ErfMap(g, 1, 1, 0), tmp_path / "e.ppm").read_bytes()
        head = b"P6\n32 32\n255\n"
        assert blob.startswith(head) and len(blob) == len(head) + 32 * 32 * 3
        assert blob[len(head):len(head) + 6] == bytes([0, 0, 0, 255, 255, 255])

    def test_non_square_dims_order(self, tmp_path):
        assert emit_ppm(np.zeros((4, 6)), tmp_path / "e.ppm").read_bytes().startswith(b"P6\n6 4\n255\n")

    def test_readback_within_quantization(self, tmp_path):
        g = np.random.default_rng(1).random((32, 32))
        back = read_ppm(emit_ppm(g, tmp_path / "e.ppm"))
        assert np.abs(back - g).max() <= 1 / 255

    def test_grid_csv(self, tmp_path):
        g = np.arange(6.0).reshape(2, 3) / 5
        lines = write_grid_csv(g, tmp_path / "g.csv").read_text().splitlines()
        assert len(lines) == 2
        np.testing.assert_array_equal(np.array([list(map(float, l.split(","))) for l in lines]), g)


def test_comparison_rows_and_maps():
    rows, maps = erf_comparison(BackboneConfig(), seeds=[0, 1], m=4)
    assert [(r["mode"], r["seed"]) for r in rows] == [("SPM", 0), ("SPM", 1), ("Conv2x2", 0), ("Conv2x2", 1)]
    assert set(maps) == {"SPM", "Conv2x2"} and all(mp.grid.max() == 1 for mp in maps.values())
