"""Coordinate conventions, bilinear warping and field resizing.

Conventions used throughout the package:

* Images and feature maps are ``(H, W, C)`` float arrays.
* A flow field is an ``(h, w, 2)`` array of *absolute* source sampling
  coordinates ``(x, y)`` in normalized units.  Pixel index ``i`` of an
  ``n``-long axis sits at ``-1 + 2 i / (n - 1)`` (align-corners), so the
  lattice endpoints are exactly at -1 and +1.
* Sampling outside the lattice reads a zero border: the edge value fades
  linearly to zero across a half-pixel fringe and is exactly zero beyond.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

# pixel coordinates within this distance of a lattice point are snapped onto it,
# so warps through an identity grid reproduce the field bit-exactly
SNAP_EPS = 1e-10


def pixel_scale(n: int) -> float:
    """Pixels per normalized unit along an ``n``-long axis."""
    return (n - 1) / 2.0 if n > 1 else 1.0


def grid_coord(i, n: int):
    """Normalized coordinate of pixel index ``i`` on an ``n``-long axis."""
    if n < 2:
        return np.zeros_like(np.asarray(i, dtype=np.float64))
    return -1.0 + 2.0 * np.asarray(i, dtype=np.float64) / (n - 1)


def to_pixel(x, n: int):
    if n < 2:
        return np.asarray(x, dtype=np.float64) * 0.0
    return (np.asarray(x, dtype=np.float64) + 1.0) * ((n - 1) / 2.0)


def lattice(h: int, w: int) -> np.ndarray:
    """Grid coordinates of every pixel; a length-1 axis sits at 0."""
    flow = np.empty((h, w, 2))
    flow[..., 0] = grid_coord(np.arange(w), w)[None, :]
    flow[..., 1] = grid_coord(np.arange(h), h)[:, None]
    return flow


def identity_grid(h: int, w: int) -> np.ndarray:
    if h < 2 or w < 2:
        raise InvalidArgument(f"identity grid needs h, w >= 2, got ({h}, {w})")
    return lattice(h, w)


def _snap(u):
    r = np.rint(u)
    return np.where(np.abs(u - r) <= SNAP_EPS, r, u)


def axis_taps(u, n: int):
    """Two-tap interpolation weights for pixel coordinates ``u`` on an ``n``-long axis.

    Returns ``(i0, i1, w0, w1)``; indices are clipped into range and
    weights of out-of-range taps are zero.  Beyond either edge the edge tap
    decays with slope 2 (half-pixel fringe).
    """
    u = _snap(np.asarray(u, dtype=np.float64))
    fl = np.floor(u)
    f = u - fl
    i0 = fl.astype(np.intp)
    i1 = i0 + 1
    w0 = 1.0 - f
    w1 = f
    w0 = np.where(i0 == n - 1, np.maximum(0.0, 1.0 - 2.0 * f), w0)
    w1 = np.where(i0 == -1, np.maximum(0.0, 2.0 * f - 1.0), w1)
    w0 = np.where((i0 >= 0) & (i0 < n), w0, 0.0)
    w1 = np.where((i1 >= 0) & (i1 < n), w1, 0.0)
    return np.clip(i0, 0, n - 1), np.clip(i1, 0, n - 1), w0, w1


def axis_tap_slopes(u, n: int):
    """Derivatives of the ``axis_taps`` weights w.r.t. ``u`` (right-continuous)."""
    u = _snap(np.asarray(u, dtype=np.float64))
    fl = np.floor(u)
    f = u - fl
    i0 = fl.astype(np.intp)
    i1 = i0 + 1
    d0 = np.full(u.shape, -1.0)
    d1 = np.full(u.shape, 1.0)
    d0 = np.where(i0 == n - 1, np.where(f < 0.5, -2.0, 0.0), d0)
    d1 = np.where(i0 == -1, np.where(f >= 0.5, 2.0, 0.0), d1)
    d0 = np.where((i0 >= 0) & (i0 < n), d0, 0.0)
    d1 = np.where((i1 >= 0) & (i1 < n), d1, 0.0)
    return d0, d1


def _check_flow(flow):
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise InvalidArgument(f"flow must be (h, w, 2), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise InvalidArgument("flow contains non-finite values")
    return flow


def _as_field(field):
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 2:
        field = field[..., None]
    if field.ndim != 3 or field.shape[-1] < 1:
        raise InvalidArgument(f"field must be (H, W, C), got {field.shape}")
    return field


def bilinear_sample(field, flow) -> np.ndarray:
    """Sample ``field`` at the absolute normalized coordinates of ``flow``."""
    field = _as_field(field)
    flow = _check_flow(flow)
    H, W = field.shape[:2]
    ix0, ix1, wx0, wx1 = axis_taps(to_pixel(flow[..., 0], W), W)
    iy0, iy1, wy0, wy1 = axis_taps(to_pixel(flow[..., 1], H), H)
    out = (wy0 * wx0)[..., None] * field[iy0, ix0]
    out += (wy0 * wx1)[..., None] * field[iy0, ix1]
    out += (wy1 * wx0)[..., None] * field[iy1, ix0]
    out += (wy1 * wx1)[..., None] * field[iy1, ix1]
    return out


def bilinear_sample_jvp(field, flow, flow_tangent) -> np.ndarray:
    """Directional derivative of :func:`bilinear_sample` w.r.t. the flow."""
    field = _as_field(field)
    flow = _check_flow(flow)
    tangent = np.asarray(flow_tangent, dtype=np.float64)
    if tangent.shape != flow.shape:
        raise InvalidArgument(f"tangent shape {tangent.shape} != flow shape {flow.shape}")
    H, W = field.shape[:2]
    u = to_pixel(flow[..., 0], W)
    v = to_pixel(flow[..., 1], H)
    ix0, ix1, wx0, wx1 = axis_taps(u, W)
    iy0, iy1, wy0, wy1 = axis_taps(v, H)
    dx0, dx1 = axis_tap_slopes(u, W)
    dy0, dy1 = axis_tap_slopes(v, H)
    du = tangent[..., 0] * pixel_scale(W)
    dv = tangent[..., 1] * pixel_scale(H)
    f00, f01 = field[iy0, ix0], field[iy0, ix1]
    f10, f11 = field[iy1, ix0], field[iy1, ix1]
    along_x = wy0[..., None] * (dx0[..., None] * f00 + dx1[..., None] * f01) + wy1[..., None] * (
        dx0[..., None] * f10 + dx1[..., None] * f11
    )
    along_y = dy0[..., None] * (wx0[..., None] * f00 + wx1[..., None] * f01) + dy1[..., None] * (
        wx0[..., None] * f10 + wx1[..., None] * f11
    )
    return du[..., None] * along_x + dv[..., None] * along_y


def _resize_axis(a, n_out: int, axis: int):
    n_in = a.shape[axis]
    if n_in == n_out:
        return a
    u = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    i0, i1, w0, w1 = axis_taps(u, n_in)
    shape = [1] * a.ndim
    shape[axis] = n_out
    w0 = w0.reshape(shape)
    w1 = w1.reshape(shape)
    return w0 * np.take(a, i0, axis=axis) + w1 * np.take(a, i1, axis=axis)


def resize_tensor(t, target) -> np.ndarray:
    """Bilinear (align-corners) resize of an ``(h, w)`` or ``(h, w, C)`` array."""
    t = np.asarray(t, dtype=np.float64)
    h, w = int(target[0]), int(target[1])
    if h < 2 or w < 2:
        raise InvalidArgument(f"resize target must be >= 2 per axis, got ({h}, {w})")
    if t.shape[0] < 2 or t.shape[1] < 2:
        raise InvalidArgument(f"resize source must be >= 2 per axis, got {t.shape[:2]}")
    if t.shape[:2] == (h, w):
        return t.copy()
    return _resize_axis(_resize_axis(t, h, 0), w, 1)


def resize_field(flow, target) -> np.ndarray:
    """Resize a flow field; normalized coordinates need no value rescaling."""
    return resize_tensor(_check_flow(flow), target)
