"""Spatial primitives on NHWC tensors.

Convolutions are evaluated tap by tap: for each kernel offset the strided
input slice is combined with that tap's weights, which keeps the inner work
vectorized while the Python loop only runs k*k times.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, _make, reshape, take, transpose


def _pad(d: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return d
    return np.pad(d, ((0, 0), (p, p), (p, p), (0, 0)))


def _out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def dwconv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
             stride: int = 1, padding: Optional[int] = None) -> Tensor:
    """Depth-wise convolution, one ``k x k`` filter per channel (weight [k, k, C]).

    ``padding`` defaults to ``k // 2``; padded taps read zeros.
    """
    if x.ndim != 4:
        raise ShapeError(f"dwconv2d expects [B,H,W,C], got {x.shape}")
    kh, kw, c = weight.shape
    if c != x.shape[-1]:
        raise ShapeError(f"dwconv2d kernel has {c} channels, input has {x.shape[-1]}")
    if stride < 1:
        raise ConfigError("stride must be positive")
    p = kh // 2 if padding is None else padding
    b, h, w, _ = x.shape
    ho, wo = _out_size(h, kh, stride, p), _out_size(w, kw, stride, p)
    if ho < 1 or wo < 1:
        raise ShapeError(f"dwconv2d output would be empty for input {x.shape}")
    xp = _pad(x.data, p)
    wd = weight.data
    out = np.zeros((b, ho, wo, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] * wd[i, j]
    if bias is not None:
        out += bias.data

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += g * wd[i, j]
                gw[i, j] = (g * xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]).sum(axis=(0, 1, 2))
        gx = gxp[:, p:p + h, p:p + w, :] if p else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make("dwconv2d", out, inputs, bw)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Dense convolution with weight [kh, kw, C_in, C_out]."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [B,H,W,C], got {x.shape}")
    kh, kw, cin, cout = weight.shape
    if cin != x.shape[-1]:
        raise ShapeError(f"conv2d kernel expects {cin} channels, input has {x.shape[-1]}")
    b, h, w, _ = x.shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")
    xp = _pad(x.data, padding)
    wd = weight.data
    out = np.zeros((b, ho, wo, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] @ wd[i, j]
    if bias is not None:
        out += bias.data

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        g2 = g.reshape(-1, cout)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                gxp[sl] += g @ wd[i, j].T
                gw[i, j] = xp[sl].reshape(-1, cin).T @ g2
        gx = gxp[:, padding:padding + h, padding:padding + w, :] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make("conv2d", out, inputs, bw)


def conv2d_merge(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """2x2 stride-2 dense convolution: the conventional patch-merging layer."""
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"conv2d_merge needs even H and W, got {x.shape}")
    if weight.shape[:2] != (2, 2):
        raise ShapeError(f"conv2d_merge needs a 2x2 kernel, got {weight.shape}")
    return conv2d(x, weight, bias, stride=2, padding=0)


def avgpool3x3_s2(x: Tensor) -> Tensor:
    """3x3 mean pool, stride 2, padding 1; padded taps are excluded from the divisor."""
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"avgpool3x3_s2 needs even H and W, got {x.shape}")
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    xp = _pad(x.data, 1)
    ones = _pad(np.ones((1, h, w, 1), dtype=x.dtype), 1)
    acc = np.zeros((b, ho, wo, c), dtype=x.dtype)
    count = np.zeros((1, ho, wo, 1), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            acc += xp[:, i:i + 2 * ho:2, j:j + 2 * wo:2, :]
            count += ones[:, i:i + 2 * ho:2, j:j + 2 * wo:2, :]
    out = acc / count

    def bw(g):
        gs = g / count
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gxp[:, i:i + 2 * ho:2, j:j + 2 * wo:2, :] += gs
        return (np.ascontiguousarray(gxp[:, 1:1 + h, 1:1 + w, :]),)

    return _make("avgpool3x3_s2", out, (x,), bw)


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """``perm[new] = old``: view channels as (groups, C/groups), transpose, flatten."""
    if groups < 1 or channels % groups:
        raise ConfigError(f"{channels} channels cannot be split into {groups} groups")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    return take(x, shuffle_permutation(x.shape[-1], groups), axis=-1)


def channel_unshuffle(x: Tensor, groups: int) -> Tensor:
    return take(x, np.argsort(shuffle_permutation(x.shape[-1], groups)), axis=-1)


def window_partition(x: Tensor, k: int = 2) -> Tensor:
    """[B,H,W,C] -> [B, H*W/k^2, k^2, C]; tiles and tokens both in raster order."""
    if x.ndim != 4 or x.shape[1] % k or x.shape[2] % k:
        raise ShapeError(f"window_partition needs H and W divisible by {k}, got {x.shape}")
    b, h, w, c = x.shape
    t = reshape(x, (b, h // k, k, w // k, k, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, (h // k) * (w // k), k * k, c))


def window_merge(windows: Tensor, h: int, w: int, k: int = 2) -> Tensor:
    """Inverse of :func:`window_partition`."""
    b, n, kk, c = windows.shape
    if h % k or w % k or n != (h // k) * (w // k) or kk != k * k:
        raise ShapeError(f"cannot merge windows {windows.shape} into {h}x{w}")
    t = reshape(windows, (b, h // k, w // k, k, k, c))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    return reshape(t, (b, h, w, c))
