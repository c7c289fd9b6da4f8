"""Deterministic numpy convolution blocks used by the seeded reference networks.

Weights are drawn from :class:`~flowforge.rng.SplitMix64`, so a seed fully
determines every parameter on every platform.  Convolutions accumulate the
kernel taps in a fixed order; results do not depend on thread count beyond
what the BLAS matmul itself guarantees.
"""

from __future__ import annotations

import numpy as np

from .rng import SplitMix64


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def conv2d(x, weight, bias=None, stride=1):
    """'Same'-padded 2D convolution of an ``(H, W, Cin)`` map with ``(k, k, Cin, Cout)`` weights."""
    k = weight.shape[0]
    pad = k // 2
    H, W, cin = x.shape
    cout = weight.shape[3]
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    if stride == 1:
        # one matmul for all taps, then accumulate shifted tap planes
        Hp, Wp = xp.shape[:2]
        taps = (xp.reshape(-1, cin) @ weight.transpose(2, 0, 1, 3).reshape(cin, k * k * cout)).reshape(Hp, Wp, k * k, cout)
        out = np.zeros((H, W, cout)) if bias is None else np.broadcast_to(bias, (H, W, cout)).copy()
        for ky in range(k):
            for kx in range(k):
                out += taps[ky : ky + H, kx : kx + W, ky * k + kx]
        return out
    Ho = (H - 1) // stride + 1
    Wo = (W - 1) // stride + 1
    out = np.zeros((Ho * Wo, cout))
    for ky in range(k):
        for kx in range(k):
            patch = xp[ky : ky + stride * (Ho - 1) + 1 : stride, kx : kx + stride * (Wo - 1) + 1 : stride]
            out += patch.reshape(-1, cin) @ weight[ky, kx]
    if bias is not None:
        out += bias
    return out.reshape(Ho, Wo, cout)


def avg_pool2(x):
    H, W = x.shape[:2]
    return x.reshape(H // 2, 2, W // 2, 2, *x.shape[2:]).mean(axis=(1, 3))


def upsample_nearest(x, target):
    h, w = target
    rows = (np.arange(h) * x.shape[0]) // h
    cols = (np.arange(w) * x.shape[1]) // w
    return x[rows][:, cols]


class Conv:
    """3x3 (by default) convolution with He-uniform seeded weights."""

    def __init__(self, rng: SplitMix64, cin, cout, kernel=3, stride=1, gain=1.0):
        bound = gain * np.sqrt(6.0 / (kernel * kernel * cin))
        self.weight = rng.uniform_array((kernel, kernel, cin, cout), -bound, bound)
        self.bias = rng.uniform_array((cout,), -0.01, 0.01) * gain
        self.stride = stride

    @property
    def cin(self):
        return self.weight.shape[2]

    @property
    def cout(self):
        return self.weight.shape[3]

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride)
