"""Conv / linear / embedding layers over the autodiff engine.

Convolutions run as im2col gathers plus one matmul, which is the fastest
honest route on CPU here. Every layer exposes its weight as a 2-D
[out, fan_in] matrix so low-rank adapters can hook any of them uniformly.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_COL_IDX_CACHE = {}


def _im2col_idx(h, w, k, stride):
    """Flat gather indices [k*k*ho*wo] over a padded (h, w) plane, ordered
    (ky, kx, oy, ox)."""
    key = (h, w, k, stride)
    hit = _COL_IDX_CACHE.get(key)
    if hit is not None:
        return hit
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    idx = []
    for ky in range(k):
        for kx in range(k):
            idx.append(((oy * stride + ky) * w + ox * stride + kx).ravel())
    out = (np.concatenate(idx), ho, wo)
    _COL_IDX_CACHE[key] = out
    return out


class Conv2d:
    """3x3 (default) convolution; weight stored as [cout, cin*k*k]."""

    def __init__(self, cin, cout, rng, k=3, stride=1, zero_init=False):
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        fan_in = cin * k * k
        if zero_init:
            w = np.zeros((cout, fan_in), np.float32)
        else:
            w = (rng.standard_normal((cout, fan_in))
                 * np.sqrt(2.0 / fan_in)).astype(np.float32)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, x, w_delta=None):
        b, c, h, w = x.shape
        pad = self.k // 2
        xp = ad.pad2d(x, pad) if pad else x
        idx, ho, wo = _im2col_idx(h + 2 * pad, w + 2 * pad, self.k,
                                  self.stride)
        cols = ad.take1(xp.reshape(b * c, (h + 2 * pad) * (w + 2 * pad)), idx)
        cols = cols.reshape(b, c, self.k * self.k, ho * wo)
        cols = cols.transpose(0, 3, 1, 2).reshape(b * ho * wo,
                                                  c * self.k * self.k)
        weight = self.w if w_delta is None else self.w + w_delta
        out = ad.matmul(cols, weight.transpose()) + self.b
        return out.reshape(b, ho, wo, self.cout).transpose(0, 3, 1, 2)


class Linear:
    def __init__(self, cin, cout, rng, zero_init=False):
        self.cin, self.cout = cin, cout
        if zero_init:
            w = np.zeros((cout, cin), np.float32)
        else:
            w = (rng.standard_normal((cout, cin))
                 * np.sqrt(2.0 / cin)).astype(np.float32)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, x, w_delta=None):
        weight = self.w if w_delta is None else self.w + w_delta
        return ad.matmul(x, weight.transpose()) + self.b


class Embedding:
    """Learned lookup table; rows gathered by integer id."""

    def __init__(self, n, dim, rng):
        self.n, self.dim = n, dim
        self.w = Tensor((rng.standard_normal((n, dim)) * 0.1)
                        .astype(np.float32), requires_grad=True)

    def parameters(self):
        return [self.w]

    def __call__(self, ids):
        return ad.take0(self.w, np.asarray(ids, np.int64))


def upsample2(x):
    """Nearest-neighbor 2x upsample of [B, C, H, W]."""
    b, c, h, w = x.shape
    rep = Tensor(np.ones((1, 1, 1, 2, 1, 2), np.float32))
    return (x.reshape(b, c, h, 1, w, 1) * rep).reshape(b, c, 2 * h, 2 * w)
