"""Guided Local Enhancement.

Each disjoint 2x2 window of the feature map becomes a five-token sequence
``[guide, t1, t2, t3, t4]``. One single-head self-attention pass (scale
1/sqrt(C), no positional encoding, no output projection) runs over it, and
the guide token's attended value becomes the downsampled pixel.

The guide token comes from one of three sources:

* ``GTG``: BatchNorm -> GELU -> stride-2 depth-wise conv over the full map,
  so the guide sees context outside its window.
* ``CLS``: one learned vector shared by every window.
* ``GAP``: the mean of the window's own four tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


from .conv import window_partition
from .errors import ConfigError, ShapeError
from .layers import BatchNorm2d, DwConv, Module, uniform_init
from .rng import Rng
from .tensor import (Parameter, Tensor, broadcast_to, concat, div, gelu, matmul, mean, reshape,
                     slice_axis, softmax, transpose)

GUIDE_MODES = ("GTG", "CLS", "GAP")
GTG_KERNELS = (3, 5, 7, 9)


@dataclass
class GleConfig:
    channels: int
    gtg_kernel: int = 7
    guide_mode: str = "GTG"
    window: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.window != 2:
            raise ConfigError("GLE window size is fixed at 2 (equal to the GTG stride)")
        if self.gtg_kernel < 1 or self.gtg_kernel % 2 == 0:
            raise ConfigError(f"gtg_kernel must be odd, got {self.gtg_kernel}")
        if self.guide_mode not in GUIDE_MODES:
            raise ConfigError(f"guide_mode must be one of {GUIDE_MODES}, got {self.guide_mode!r}")
        if self.channels < 1:
            raise ConfigError("channels must be positive")


class GuideTokenGenerator(Module):
    def __init__(self, channels: int, kernel: int, rng: Rng):
        self.norm = BatchNorm2d(channels)
        self.conv = DwConv(channels, kernel, rng, stride=2, padding=kernel // 2)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
            raise ShapeError(f"GTG needs even H and W, got {x.shape}")
        return self.conv(gelu(self.norm(x)))


def gtg_forward(x: Tensor, params: GuideTokenGenerator) -> Tensor:
    return params(x)


def window_attention(z: Tensor, qkv: Tensor) -> tuple[Tensor, Tensor]:
    """Single-head attention over the token axis of ``z`` [..., L, C].

    Returns (attended values [..., L, C], attention weights [..., L, L]).
    """
    c = z.shape[-1]
    if qkv.shape != (c, 3 * c):
        raise ShapeError(f"U_qkv must be {c}x{3 * c}, got {qkv.shape}")
    proj = matmul(z, qkv)
    q = slice_axis(proj, 0, c, axis=-1)
    k = slice_axis(proj, c, 2 * c, axis=-1)
    v = slice_axis(proj, 2 * c, 3 * c, axis=-1)
    axes = tuple(range(z.ndim - 2)) + (z.ndim - 1, z.ndim - 2)
    scores = div(matmul(q, transpose(k, axes)), math.sqrt(c))
    attn = softmax(scores, axis=-1)
    return matmul(attn, v), attn


class GLE(Module):
    def __init__(self, cfg: GleConfig, rng: Rng):
        self.cfg = cfg
        c = cfg.channels
        if cfg.guide_mode == "GTG":
            self.gtg = GuideTokenGenerator(c, cfg.gtg_kernel, rng.child(0))
        if cfg.guide_mode == "CLS":
            self.cls_token = Parameter(uniform_init(rng.child(1), (c,), c), "cls_token")
        self.qkv = Parameter(uniform_init(rng.child(2), (c, 3 * c), c), "qkv")

    def guide_tokens(self, x: Tensor, windows: Tensor) -> Tensor:
        """One guide per window, shaped [B, H*W/4, 1, C]."""
        b, n, _, c = windows.shape
        mode = self.cfg.guide_mode
        if mode == "GTG":
            return reshape(self.gtg(x), (b, n, 1, c))
        if mode == "CLS":
            return broadcast_to(reshape(self.cls_token, (1, 1, 1, c)), (b, n, 1, c))
        return mean(windows, axis=2, keepdims=True)

    def sequences(self, x: Tensor) -> Tensor:
        windows = window_partition(x, 2)
        return concat([self.guide_tokens(x, windows), windows], axis=2)

    def forward(self, x: Tensor, return_attention: bool = False):
        c = self.cfg.channels
        if x.ndim != 4 or x.shape[-1] != c:
            raise ShapeError(f"GLE expects [B,H,W,{c}], got {x.shape}")
        if x.shape[1] % 2 or x.shape[2] % 2:
            raise ShapeError(f"GLE needs even H and W, got {x.shape}")
        b, h, w, _ = x.shape
        out, attn = window_attention(self.sequences(x), self.qkv)
        y = reshape(slice_axis(out, 0, 1, axis=2), (b, h // 2, w // 2, c))
        return (y, attn) if return_attention else y


def guide_token_source(x: Tensor, windows: Tensor, mode: str, params: GLE) -> Tensor:
    if mode != params.cfg.guide_mode:
        raise ConfigError(f"parameters were built for guide_mode={params.cfg.guide_mode}")
    return params.guide_tokens(x, windows)


def gle_forward(x: Tensor, cfg: GleConfig, params: GLE) -> Tensor:
    if params.cfg != cfg:
        raise ConfigError("parameters were built for a different GLE config")
    return params(x)
