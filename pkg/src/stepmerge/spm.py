"""The Stepwise Patch Merging block and its drop-in baselines.

``SPM`` runs MSA (C -> C', spatial kept) then GLE (spatial halved, C' kept).
``Conv2x2`` is the conventional strided-conv patch merging, and
``AvgPool3x3`` pools then projects C -> C' with a 1x1 linear layer. All
three map [B, H, W, C] to [B, H/2, W/2, C'].
"""

from __future__ import annotations

from dataclasses import dataclass

from .conv import avgpool3x3_s2, conv2d_merge
from .errors import ConfigError, ShapeError
from .gle import GLE, GleConfig
from .layers import Conv, Linear, Module
from .msa import MSA, MsaConfig
from .rng import Rng
from .tensor import Tensor

MERGE_MODES = ("SPM", "Conv2x2", "AvgPool3x3")


@dataclass
class SpmConfig:
    msa: MsaConfig
    gle: GleConfig = None
    merge_mode: str = "SPM"

    def __post_init__(self):
        if self.gle is None:
            self.gle = GleConfig(self.msa.out_channels)
        if self.merge_mode not in MERGE_MODES:
            raise ConfigError(f"merge_mode must be one of {MERGE_MODES}, got {self.merge_mode!r}")
        if self.gle.channels != self.msa.out_channels:
            raise ConfigError("GLE channels must equal MSA out_channels")

    @classmethod
    def build(cls, c: int, c_out: int, heads: int = 2, kernel_sizes=None, gtg_kernel: int = 7,
              guide_mode: str = "GTG", merge_mode: str = "SPM") -> "SpmConfig":
        return cls(MsaConfig(c, c_out, heads, kernel_sizes),
                   GleConfig(c_out, gtg_kernel, guide_mode), merge_mode)

    @property
    def in_channels(self) -> int:
        return self.msa.in_channels

    @property
    def out_channels(self) -> int:
        return self.msa.out_channels


def spm_shape_plan(h: int, w: int, c: int, c_out: int) -> tuple[int, int, int]:
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ShapeError(f"patch merging needs even spatial dims, got {h}x{w}")
    if c < 1 or c_out < 1:
        raise ShapeError(f"channel counts must be positive, got {c} -> {c_out}")
    return h // 2, w // 2, c_out


class MergeBlock(Module):
    def __init__(self, cfg: SpmConfig, rng: Rng):
        self.cfg = cfg
        c, c_out = cfg.in_channels, cfg.out_channels
        if cfg.merge_mode == "SPM":
            self.msa = MSA(cfg.msa, rng.child(0))
            self.gle = GLE(cfg.gle, rng.child(1))
        elif cfg.merge_mode == "Conv2x2":
            self.conv = Conv(c, c_out, 2, rng.child(2), stride=2)
        else:
            self.proj = Linear(c, c_out, rng.child(3))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[-1] != self.cfg.in_channels:
            raise ShapeError(f"merge block expects [B,H,W,{self.cfg.in_channels}], got {x.shape}")
        spm_shape_plan(x.shape[1], x.shape[2], x.shape[3], self.cfg.out_channels)
        mode = self.cfg.merge_mode
        if mode == "SPM":
            return self.gle(self.msa(x))
        if mode == "Conv2x2":
            return conv2d_merge(x, self.conv.weight, self.conv.bias)
        return self.proj(avgpool3x3_s2(x))


def spm_forward(x: Tensor, cfg: SpmConfig, params: MergeBlock) -> Tensor:
    if params.cfg != cfg:
        raise ConfigError("parameters were built for a different merge config")
    return params(x)
