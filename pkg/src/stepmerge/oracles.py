"""Naive loop references for the vectorized kernels.

These are intentionally written element by element, share no code with the
fast paths, and are meant for small float64 inputs only.
"""

from __future__ import annotations

import math

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def dwconv2d(x, w, bias=None, stride=1, pad=None):
    kh, kw, c = w.shape
    pad = kh // 2 if pad is None else pad
    b, h, wd, _ = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, ho, wo, c))
    for n in range(b):
        for oy in range(ho):
            for ox in range(wo):
                for ch in range(c):
                    s = 0.0 if bias is None else bias[ch]
                    for i in range(kh):
                        for j in range(kw):
                            iy, ix = oy * stride + i - pad, ox * stride + j - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                s += x[n, iy, ix, ch] * w[i, j, ch]
                    out[n, oy, ox, ch] = s
    return out


def conv2d(x, w, bias=None, stride=1, pad=0):
    kh, kw, cin, cout = w.shape
    b, h, wd, _ = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((b, ho, wo, cout))
    for n in range(b):
        for oy in range(ho):
            for ox in range(wo):
                for co in range(cout):
                    s = 0.0 if bias is None else bias[co]
                    for i in range(kh):
                        for j in range(kw):
                            iy, ix = oy * stride + i - pad, ox * stride + j - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                for ci in range(cin):
                                    s += x[n, iy, ix, ci] * w[i, j, ci, co]
                    out[n, oy, ox, co] = s
    return out


def avgpool3x3_s2(x):
    b, h, w, c = x.shape
    out = np.zeros((b, h // 2, w // 2, c))
    for n in range(b):
        for oy in range(h // 2):
            for ox in range(w // 2):
                for ch in range(c):
                    s, cnt = 0.0, 0
                    for i in range(3):
                        for j in range(3):
                            iy, ix = 2 * oy + i - 1, 2 * ox + j - 1
                            if 0 <= iy < h and 0 <= ix < w:
                                s += x[n, iy, ix, ch]
                                cnt += 1
                    out[n, oy, ox, ch] = s / cnt
    return out


def channel_shuffle(x, groups):
    c = x.shape[-1]
    d = c // groups
    out = np.empty_like(x)
    for g in range(groups):
        for i in range(d):
            out[..., i * groups + g] = x[..., g * d + i]
    return out


def msa(x, kernels, dw_biases, mix, proj_w, proj_b):
    """Explicit pipeline: per-head dwconv -> shuffle -> block-diagonal 1x1 -> dense 1x1."""
    n = len(kernels)
    c = x.shape[-1]
    d = c // n
    heads = [dwconv2d(x[..., i * d:(i + 1) * d], kernels[i], dw_biases[i]) for i in range(n)]
    shuffled = channel_shuffle(np.concatenate(heads, axis=-1), n)
    block = np.zeros((c, c))
    for g in range(d):
        for i in range(n):
            for j in range(n):
                block[g * n + j, g * n + i] = mix[g, i, j]
    b, h, w, _ = x.shape
    mixed = np.zeros((b, h, w, c))
    out = np.zeros((b, h, w, proj_w.shape[1]))
    for p in range(b):
        for yy in range(h):
            for xx in range(w):
                mixed[p, yy, xx] = matmul(shuffled[p, yy, xx][None, :], block)[0]
                out[p, yy, xx] = matmul(mixed[p, yy, xx][None, :], proj_w)[0]
                if proj_b is not None:
                    out[p, yy, xx] += proj_b
    return out


def attention_guide_row(z, u):
    """Dense attention over a [L, C] token sequence; returns (row 0 output, L x L weights)."""
    length, c = z.shape
    qkv = matmul(z, u)
    q, k, v = qkv[:, :c], qkv[:, c:2 * c], qkv[:, 2 * c:]
    scores = np.zeros((length, length))
    for i in range(length):
        for j in range(length):
            scores[i, j] = sum(q[i, t] * k[j, t] for t in range(c)) / math.sqrt(c)
    weights = np.zeros_like(scores)
    for i in range(length):
        m = max(scores[i])
        e = [math.exp(s - m) for s in scores[i]]
        tot = sum(e)
        weights[i] = [v_ / tot for v_ in e]
    out = np.zeros(c)
    for j in range(length):
        out += weights[0, j] * v[j]
    return out, weights
