"""Multi-Scale Aggregation.

Channels are split into N heads; head n goes through a depth-wise conv of
size k_n. Channel c of every head is then gathered into an N-vector and
mixed by its own N x N matrix (C/N matrices in total), and the mixed groups
are concatenated in that interleaved order and projected C -> C'.
Spatial size is preserved. There is no nonlinearity, so with zero biases
the whole block is linear in its input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


from .conv import channel_shuffle
from .errors import ConfigError, ShapeError
from .layers import DwConv, Linear, Module, uniform_init
from .rng import Rng
from .tensor import Parameter, Tensor, concat, matmul, reshape, slice_axis, transpose


def default_kernel_sizes(n: int) -> list[int]:
    if n < 1:
        raise ConfigError("MSA needs at least one head")
    return [2 * i + 1 for i in range(1, n + 1)]


@dataclass
class MsaConfig:
    in_channels: int
    out_channels: int
    heads: int = 2
    kernel_sizes: Optional[list[int]] = None
    bias: bool = True

    def __post_init__(self):
        if self.kernel_sizes is None:
            self.kernel_sizes = default_kernel_sizes(self.heads)
        self.kernel_sizes = [int(k) for k in self.kernel_sizes]
        self.validate()

    def validate(self):
        if self.heads < 1 or self.in_channels % self.heads:
            raise ConfigError(f"in_channels={self.in_channels} is not divisible by heads={self.heads}")
        if len(self.kernel_sizes) != self.heads:
            raise ConfigError(f"expected {self.heads} kernel sizes, got {self.kernel_sizes}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd and >= 1, got {self.kernel_sizes}")
        if self.out_channels < 1:
            raise ConfigError("out_channels must be positive")

    @property
    def head_dim(self) -> int:
        return self.in_channels // self.heads


def cross_head_mix(heads: list[Tensor], mix: Tensor) -> Tensor:
    """Mix channel c across heads with ``mix[c]`` (shape [C/N, N, N]).

    Output channels are laid out as [G^1; G^2; ...; G^{C/N}], each G^c
    holding N channels, so ``out[..., c*N + i] = sum_j mix[c, i, j] * heads[j][..., c]``.
    """
    n = len(heads)
    d = heads[0].shape[-1]
    if mix.shape != (d, n, n):
        raise ConfigError(f"expected {d} mix matrices of shape {n}x{n}, got {mix.shape}")
    lead = heads[0].shape[:-1]
    shuffled = channel_shuffle(concat(heads, axis=-1), n)
    # [..., C/N, 1, N] @ [C/N, N, N]^T -> [..., C/N, 1, N]
    vec = reshape(shuffled, (-1, d, 1, n))
    mixed = matmul(vec, transpose(mix, (0, 2, 1)))
    return reshape(mixed, lead + (d * n,))


class MSA(Module):
    def __init__(self, cfg: MsaConfig, rng: Rng):
        self.cfg = cfg
        d = cfg.head_dim
        self.convs = [DwConv(d, k, rng.child(i), bias=cfg.bias) for i, k in enumerate(cfg.kernel_sizes)]
        self.mix = Parameter(uniform_init(rng.child(100), (d, cfg.heads, cfg.heads), cfg.heads), "mix")
        self.proj = Linear(cfg.in_channels, cfg.out_channels, rng.child(101), bias=cfg.bias)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[-1] != cfg.in_channels:
            raise ShapeError(f"MSA expects [B,H,W,{cfg.in_channels}], got {x.shape}")
        d = cfg.head_dim
        heads = [conv(slice_axis(x, n * d, (n + 1) * d, axis=-1)) for n, conv in enumerate(self.convs)]
        return self.proj(cross_head_mix(heads, self.mix))


def msa_forward(x: Tensor, cfg: MsaConfig, params: MSA) -> Tensor:
    if params.cfg is not cfg and params.cfg != cfg:
        raise ConfigError("parameters were built for a different MSA config")
    return params(x)
