"""Optical-flow colorwheel rendering (Middlebury / Baker et al. palette)."""

from __future__ import annotations

import numpy as np

from .io import flow_to_displacement

# hue segment lengths: red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red
SEGMENTS = (15, 6, 4, 11, 13, 6)


def make_colorwheel() -> np.ndarray:
    ry, yg, gc, cb, bm, mr = SEGMENTS
    wheel = np.zeros((sum(SEGMENTS), 3))
    col = 0
    wheel[col : col + ry, 0] = 255
    wheel[col : col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col : col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col : col + yg, 1] = 255
    col += yg
    wheel[col : col + gc, 1] = 255
    wheel[col : col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col : col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col : col + cb, 2] = 255
    col += cb
    wheel[col : col + bm, 2] = 255
    wheel[col : col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col : col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col : col + mr, 0] = 255
    return wheel / 255.0


def displacement_to_color(disp) -> np.ndarray:
    """Hue from direction, saturation from magnitude over the per-image maximum."""
    u, v = disp[..., 0], disp[..., 1]
    rad = np.hypot(u, v)
    peak = rad.max() if rad.size else 0.0
    rad = rad / peak if peak > 0 else np.zeros_like(rad)
    wheel = make_colorwheel()
    n = len(wheel)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (n - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % n
    f = (fk - k0)[..., None]
    col = (1.0 - f) * wheel[k0] + f * wheel[k1]
    return 1.0 - rad[..., None] * (1.0 - col)


def visualize_flow(flow) -> np.ndarray:
    return displacement_to_color(flow_to_displacement(np.asarray(flow, dtype=np.float64)))
