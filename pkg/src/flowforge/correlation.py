"""Structure correlation volume: construction, pooled pyramid, patch lookup and
the soft-argmax initialization that needs no motion prior."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import nets
from .errors import InvalidArgument, InvalidConfiguration
from .grid import SNAP_EPS, lattice, resize_tensor, to_pixel
from .prior import KeypointSet, render_heatmaps
from .rng import SplitMix64, derive_seed


@dataclass(frozen=True)
class CorrelationVolume:
    """``levels[l]`` has shape ``(h, w, h / 2**l, w / 2**l)``; driving dims first."""

    levels: tuple

    @property
    def base(self) -> np.ndarray:
        return self.levels[0]

    @property
    def num_levels(self) -> int:
        """Number of pooled levels above the base (``P``)."""
        return len(self.levels) - 1

    @property
    def resolution(self):
        return self.base.shape[:2]


class StructureEncoder(Protocol):
    def encode_source(self, x) -> np.ndarray: ...

    def encode_driving(self, x) -> np.ndarray: ...


class SeededStructureEncoder:
    """Two independent conv stacks standing in for the structure hourglasses."""

    def __init__(self, num_keypoints=10, channels=32, seed=0, width=32):
        rng = SplitMix64(derive_seed(seed, "structure-source"))
        self.src = [nets.Conv(rng, num_keypoints + 3, width), nets.Conv(rng, width, channels)]
        rng = SplitMix64(derive_seed(seed, "structure-driving"))
        self.drv = [nets.Conv(rng, num_keypoints, width), nets.Conv(rng, width, channels)]

    def encode_source(self, x):
        return self.src[1](nets.relu(self.src[0](x)))

    def encode_driving(self, x):
        return self.drv[1](nets.relu(self.drv[0](x)))


def encode_source_structure(encoder: StructureEncoder, source, src_kp: KeypointSet, sigma: float) -> np.ndarray:
    source = np.asarray(source, dtype=np.float64)
    H, W = source.shape[:2]
    res = (H // 4, W // 4)
    x = np.concatenate([resize_tensor(source, res), render_heatmaps(src_kp, res, sigma)], axis=-1)
    return encoder.encode_source(x)


def encode_driving_structure(encoder: StructureEncoder, drv_kp: KeypointSet, resolution, sigma: float) -> np.ndarray:
    return encoder.encode_driving(render_heatmaps(drv_kp, resolution, sigma))


def check_structure_pair(src_feat, drv_feat):
    if np.shape(src_feat) != np.shape(drv_feat):
        raise InvalidConfiguration(
            f"structure encoders disagree: source features {np.shape(src_feat)}, driving features {np.shape(drv_feat)}"
        )


def encode_structures(encoder: StructureEncoder, source, src_kp: KeypointSet, drv_kp: KeypointSet, sigma: float):
    """Source and driving structure features at quarter resolution.

    The source branch sees the downsampled source image concatenated with
    its keypoint heatmaps; the driving branch sees heatmaps only.
    """
    H, W = np.shape(source)[:2]
    src_feat = encode_source_structure(encoder, source, src_kp, sigma)
    drv_feat = encode_driving_structure(encoder, drv_kp, (H // 4, W // 4), sigma)
    check_structure_pair(src_feat, drv_feat)
    return src_feat, drv_feat


def pool_source_dims(level: np.ndarray) -> np.ndarray:
    h, w, hs, ws = level.shape
    return level.reshape(h, w, hs // 2, 2, ws // 2, 2).mean(axis=(3, 5))


def build_volume(drv_feat, src_feat, pyramid_levels: int = 1) -> CorrelationVolume:
    drv_feat = np.asarray(drv_feat, dtype=np.float64)
    src_feat = np.asarray(src_feat, dtype=np.float64)
    if drv_feat.shape != src_feat.shape or drv_feat.ndim != 3:
        raise InvalidArgument(f"feature shapes differ: driving {drv_feat.shape}, source {src_feat.shape}")
    if pyramid_levels < 0:
        raise InvalidArgument("pyramid_levels must be >= 0")
    h, w, c = drv_feat.shape
    step = 2**pyramid_levels
    if h % step or w % step:
        raise InvalidArgument(f"volume resolution {(h, w)} not divisible by 2**{pyramid_levels}")
    base = (drv_feat.reshape(h * w, c) @ src_feat.reshape(h * w, c).T).reshape(h, w, h, w)
    levels = [base]
    for _ in range(pyramid_levels):
        levels.append(pool_source_dims(levels[-1]))
    return CorrelationVolume(tuple(levels))


def _window_weights(c, n: int, r: int):
    """Weights mapping a ``2r + 2`` integer window onto ``2r + 1`` unit-spaced samples.

    Samples sit at ``c + k`` for ``k = -r..r``; the window starts at
    ``floor(c) - r``.  Taps follow :func:`flowforge.grid.axis_taps`
    (zero outside, half-pixel fringe at both edges).
    """
    rnd = np.rint(c)
    c = np.where(np.abs(c - rnd) <= SNAP_EPS, rnd, c)
    fl = np.floor(c)
    f = c - fl
    start = fl.astype(np.intp) - r
    k = np.arange(2 * r + 1)
    i0 = start[:, None] + k[None, :]
    w0 = np.broadcast_to((1.0 - f)[:, None], i0.shape)
    w1 = np.broadcast_to(f[:, None], i0.shape)
    w0 = np.where(i0 == n - 1, np.maximum(0.0, 1.0 - 2.0 * f)[:, None], w0)
    w1 = np.where(i0 == -1, np.maximum(0.0, 2.0 * f - 1.0)[:, None], w1)
    w0 = np.where((i0 >= 0) & (i0 < n), w0, 0.0)
    w1 = np.where((i0 + 1 >= 0) & (i0 + 1 < n), w1, 0.0)
    m = np.zeros((len(c), 2 * r + 1, 2 * r + 2))
    m[:, k, k] = w0
    m[:, k, k + 1] = w1
    return start, m


def _driving_taps(n_out: int, n_vol: int):
    # same map as to_pixel(grid_coord(.)), but exact on the volume lattice
    if n_out < 2:
        u = np.full(n_out, (n_vol - 1) / 2.0)
    else:
        u = np.arange(n_out) * (n_vol - 1) / (n_out - 1)
    i0 = np.clip(np.floor(u).astype(np.intp), 0, n_vol - 1)
    i1 = np.minimum(i0 + 1, n_vol - 1)
    f = u - i0
    return i0, i1, 1.0 - f, f


def lookup(volume: CorrelationVolume, flow, r: int, chunk: int = 8192) -> np.ndarray:
    """Patch correlation features ``(h_i, w_i, (P + 1) (2r + 1)**2)`` around the flow targets.

    Driving dims of the volume are bilinearly interpolated at the flow
    lattice's grid coordinates (an exact slice when resolutions agree).
    Offsets are integer steps in the pixel units of each pyramid level.
    Channels are level-major, then row-major over ``(dy, dx)``.
    """
    if r < 0:
        raise InvalidArgument(f"lookup radius must be >= 0, got {r}")
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2 or not np.all(np.isfinite(flow)):
        raise InvalidArgument("lookup needs a finite (h, w, 2) flow")
    h, w = volume.resolution
    hi, wi = flow.shape[:2]
    side = 2 * r + 1
    n_taps = side * side

    ry0, ry1, wy0, wy1 = _driving_taps(hi, h)
    rx0, rx1, wx0, wx1 = _driving_taps(wi, w)
    rows = [
        (ry0[:, None] * w + rx0[None, :], wy0[:, None] * wx0[None, :]),
        (ry0[:, None] * w + rx1[None, :], wy0[:, None] * wx1[None, :]),
        (ry1[:, None] * w + rx0[None, :], wy1[:, None] * wx0[None, :]),
        (ry1[:, None] * w + rx1[None, :], wy1[:, None] * wx1[None, :]),
    ]
    rows = [(idx.reshape(-1), wt.reshape(-1)) for idx, wt in rows]

    u = to_pixel(flow[..., 0], w).reshape(-1)
    v = to_pixel(flow[..., 1], h).reshape(-1)
    out = np.empty((hi * wi, len(volume.levels) * n_taps))
    t = np.arange(side + 1)
    for lvl, corr in enumerate(volume.levels):
        hs, ws = corr.shape[2:]
        flat = corr.reshape(h * w, hs * ws)
        scale = 2.0**lvl
        # pooled cell j covers level-0 pixels [j 2^l, (j + 1) 2^l - 1]
        ul = (u + 0.5) / scale - 0.5
        vl = (v + 0.5) / scale - 0.5
        for s in range(0, hi * wi, chunk):
            e = min(s + chunk, hi * wi)
            sx, mx = _window_weights(ul[s:e], ws, r)
            sy, my = _window_weights(vl[s:e], hs, r)
            jx = np.clip(sx[:, None] + t, 0, ws - 1)
            jy = np.clip(sy[:, None] + t, 0, hs - 1)
            cols = jy[:, :, None] * ws + jx[:, None, :]
            window = np.zeros(cols.shape)
            for idx, wt in rows:
                window += wt[s:e, None, None] * flat[idx[s:e, None, None], cols]
            patch = my @ window @ mx.transpose(0, 2, 1)
            out[s:e, lvl * n_taps : (lvl + 1) * n_taps] = patch.reshape(e - s, n_taps)
    return out.reshape(hi, wi, -1)


def _row_softmax(volume: CorrelationVolume):
    h, w = volume.resolution
    logits = volume.base.reshape(h * w, h * w)
    if not np.all(np.isfinite(logits)):
        raise InvalidArgument("correlation volume contains non-finite values")
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return p


def non_prior_init(volume: CorrelationVolume) -> np.ndarray:
    """Soft-argmax flow: softmax over source positions, expectation of the identity grid."""
    h, w = volume.resolution
    p = _row_softmax(volume)
    return (p @ lattice(h, w).reshape(h * w, 2)).reshape(h, w, 2)


def non_prior_init_jvp(volume: CorrelationVolume, tangent) -> np.ndarray:
    """Directional derivative of :func:`non_prior_init` w.r.t. the base volume."""
    h, w = volume.resolution
    tangent = np.asarray(tangent, dtype=np.float64)
    if tangent.shape != volume.base.shape:
        raise InvalidArgument(f"tangent shape {tangent.shape} != volume shape {volume.base.shape}")
    p = _row_softmax(volume)
    t = tangent.reshape(h * w, h * w)
    g = lattice(h, w).reshape(h * w, 2)
    pt = p * t
    return (pt @ g - pt.sum(axis=1, keepdims=True) * (p @ g)).reshape(h, w, 2)
