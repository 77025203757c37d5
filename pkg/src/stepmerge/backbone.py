"""A three-stage toy hierarchical classifier with swappable merge blocks.

32x32x3 image -> 4x4/4 patch embedding (8x8 tokens) -> stage 1 -> merge ->
stage 2 (4x4) -> merge -> stage 3 (2x2) -> global mean -> linear.
Stage blocks are deliberately local (3x3 depth-wise conv, GELU, channel MLP,
residual) so the merge blocks decide how far information travels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import ConfigError, ShapeError
from .gle import GUIDE_MODES
from .layers import Conv, DwConv, Linear, Module
from .msa import default_kernel_sizes
from .rng import Rng
from .spm import MERGE_MODES, MergeBlock, SpmConfig
from .tensor import Tensor, add, gelu, mean

INIT_STREAM = 0xC0FFEE


@dataclass
class BackboneConfig:
    image_size: int = 32
    in_channels: int = 3
    patch_size: int = 4
    channels: list = field(default_factory=lambda: [8, 16, 32])
    depths: list = field(default_factory=lambda: [1, 1, 1])
    merge_modes: list = field(default_factory=lambda: ["SPM", "SPM"])
    heads: int = 4
    kernel_sizes: Optional[list] = None
    gtg_kernel: int = 7
    guide_mode: str = "GTG"
    mlp_ratio: int = 2
    num_classes: int = 2

    def __post_init__(self):
        self.channels = [int(c) for c in self.channels]
        self.depths = [int(d) for d in self.depths]
        self.merge_modes = [str(m) for m in self.merge_modes]
        if self.kernel_sizes is not None:
            self.kernel_sizes = [int(k) for k in self.kernel_sizes]
        self.validate()

    def validate(self):
        n = len(self.channels)
        if n < 1 or len(self.depths) != n or len(self.merge_modes) != n - 1:
            raise ConfigError("need one depth per stage and one merge mode between consecutive stages")
        for m in self.merge_modes:
            if m not in MERGE_MODES:
                raise ConfigError(f"merge mode {m!r} not in {MERGE_MODES}")
        if self.guide_mode not in GUIDE_MODES:
            raise ConfigError(f"guide_mode {self.guide_mode!r} not in {GUIDE_MODES}")
        if self.gtg_kernel < 1 or self.gtg_kernel % 2 == 0:
            raise ConfigError(f"gtg_kernel must be odd, got {self.gtg_kernel}")
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be a multiple of patch_size")
        grid = self.image_size // self.patch_size
        if grid % (1 << (n - 1)):
            raise ConfigError(f"token grid {grid} cannot be halved {n - 1} times")
        if "SPM" in self.merge_modes:
            ks = self.kernel_sizes or default_kernel_sizes(self.heads)
            if len(ks) != self.heads or any(k < 1 or k % 2 == 0 for k in ks):
                raise ConfigError(f"kernel_sizes {ks} must be {self.heads} odd sizes")
            for c, m in zip(self.channels, self.merge_modes):
                if m == "SPM" and c % self.heads:
                    raise ConfigError(f"stage width {c} not divisible by heads={self.heads}")

    def grids(self) -> list[int]:
        g = self.image_size // self.patch_size
        return [g >> s for s in range(len(self.channels))]

    def merge_config(self, s: int) -> SpmConfig:
        return SpmConfig.build(self.channels[s], self.channels[s + 1], self.heads, self.kernel_sizes,
                               self.gtg_kernel, self.guide_mode, self.merge_modes[s])

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


class MixerBlock(Module):
    def __init__(self, c: int, ratio: int, rng: Rng):
        self.dw = DwConv(c, 3, rng.child(0))
        self.fc1 = Linear(c, ratio * c, rng.child(1))
        self.fc2 = Linear(ratio * c, c, rng.child(2))

    def forward(self, x: Tensor) -> Tensor:
        return add(x, self.fc2(gelu(self.fc1(gelu(self.dw(x))))))


class Stage(Module):
    def __init__(self, c: int, depth: int, ratio: int, rng: Rng):
        self.blocks = [MixerBlock(c, ratio, rng.child(i)) for i in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        self.cfg = cfg
        rng = Rng(seed, INIT_STREAM)
        p = cfg.patch_size
        self.patch_embed = Conv(cfg.in_channels, cfg.channels[0], p, rng.child(0), stride=p)
        self.stages = [Stage(c, d, cfg.mlp_ratio, rng.child(10 + i))
                       for i, (c, d) in enumerate(zip(cfg.channels, cfg.depths))]
        self.merges = [MergeBlock(cfg.merge_config(s), rng.child(20 + s))
                       for s in range(len(cfg.channels) - 1)]
        self.head = Linear(cfg.channels[-1], cfg.num_classes, rng.child(30))
        self.bind_names()

    @property
    def input_shape(self) -> tuple:
        return (self.cfg.image_size, self.cfg.image_size, self.cfg.in_channels)

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    def _check_input(self, x: Tensor):
        cfg = self.cfg
        want = (cfg.image_size, cfg.image_size, cfg.in_channels)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(f"backbone expects [B,{want[0]},{want[1]},{want[2]}], got {x.shape}")

    def tap(self, x: Tensor, stage: int) -> Tensor:
        """Feature map entering ``stage`` (1-based); stage 1 is the patch embedding."""
        if not 1 <= stage <= self.num_stages:
            raise ConfigError(f"stage must be in 1..{self.num_stages}, got {stage}")
        self._check_input(x)
        h = self.patch_embed(x)
        for s in range(stage - 1):
            h = self.merges[s](self.stages[s](h))
        return h

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        h = self.patch_embed(x)
        for s, stage in enumerate(self.stages):
            h = stage(h)
            if s < len(self.merges):
                h = self.merges[s](h)
        return self.head(mean(h, axis=(1, 2)))

    def merge_parameter_count(self) -> int:
        return sum(m.num_parameters() for m in self.merges)
