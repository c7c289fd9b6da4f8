"""File formats: images, Middlebury flow files, volume dumps, keypoints, rasters.

Flow files use the Middlebury layout: ``b"PIEH"``, little-endian int32
width and height, then row-major float32 ``(u, v)`` pixel displacements.
Volume dumps and rasters share one framing: a single line of JSON
followed by little-endian float32 payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np
from PIL import Image

from .correlation import CorrelationVolume
from .errors import FormatError
from .grid import lattice, pixel_scale
from .prior import KeypointSet

FLO_MAGIC = b"PIEH"


def quantize(image) -> np.ndarray:
    """Round to 8 bits with a +0.5 offset (round half up)."""
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot read image ({exc})") from exc
    return data / 255.0


def write_image(image, path):
    """Write PNG, or binary PPM (P6) when the suffix is .ppm."""
    data = quantize(image)
    if str(path).lower().endswith(".ppm"):
        h, w = data.shape[:2]
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(np.ascontiguousarray(data[..., :3]).tobytes())
    else:
        Image.fromarray(data).save(path, format="PNG")


def flow_to_displacement(flow) -> np.ndarray:
    """Absolute normalized flow to pixel-unit displacement."""
    h, w = flow.shape[:2]
    disp = np.asarray(flow, dtype=np.float64) - lattice(h, w)
    return disp * np.array([pixel_scale(w), pixel_scale(h)])


def displacement_to_flow(disp) -> np.ndarray:
    h, w = disp.shape[:2]
    return np.asarray(disp, dtype=np.float64) / np.array([pixel_scale(w), pixel_scale(h)]) + lattice(h, w)


def write_flo(disp, path):
    disp = np.asarray(disp)
    h, w = disp.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<ii", w, h))
        fh.write(disp.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {FLO_MAGIC!r}", 0)
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header", len(raw))
    w, h = struct.unpack("<ii", raw[4:12])
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: invalid size {w}x{h}", 4)
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload, {len(raw)} of {need} bytes", len(raw))
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes", need)
    disp = np.frombuffer(raw, dtype="<f4", count=2 * w * h, offset=12).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(disp))
    if bad.size:
        raise FormatError(f"{path}: non-finite flow value", 12 + 4 * int(bad[0]))
    return disp.reshape(h, w, 2)


def write_flow(flow, path):
    write_flo(flow_to_displacement(flow), path)


def read_flow(path) -> np.ndarray:
    return displacement_to_flow(read_flo(path))


def _write_framed(path, header, arrays):
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_framed(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"\n")
    if end < 0:
        raise FormatError(f"{path}: missing JSON header line", 0)
    try:
        header = json.loads(raw[:end])
    except ValueError as exc:
        raise FormatError(f"{path}: bad JSON header ({exc})", 0) from exc
    if header.get("dtype") != "f32le":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}", 0)
    return header, raw, end + 1


def _take(raw, offset, count, path):
    need = offset + 4 * count
    if len(raw) < need:
        raise FormatError(f"{path}: truncated payload", len(raw))
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{path}: non-finite value", offset + 4 * int(bad[0]))
    return values, need


def write_volume(volume: CorrelationVolume, path):
    h, w = volume.resolution
    _write_framed(path, {"h": h, "w": w, "levels": len(volume.levels), "dtype": "f32le"}, volume.levels)


def read_volume(path) -> CorrelationVolume:
    header, raw, offset = _read_framed(path)
    try:
        h, w, n = int(header["h"]), int(header["w"]), int(header["levels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header needs h, w, levels", 0) from exc
    levels = []
    for lvl in range(n):
        shape = (h, w, h >> lvl, w >> lvl)
        values, offset = _take(raw, offset, int(np.prod(shape)), path)
        levels.append(values.reshape(shape))
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes", offset)
    return CorrelationVolume(tuple(levels))


def write_raster(array, path):
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    _write_framed(path, {"resolution": list(a.shape[:2]), "channels": a.shape[2], "dtype": "f32le"}, [a])


def read_raster(path) -> np.ndarray:
    header, raw, offset = _read_framed(path)
    try:
        h, w = (int(v) for v in header["resolution"])
        c = int(header["channels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header needs resolution and channels", 0) from exc
    values, end = _take(raw, offset, h * w * c, path)
    if end != len(raw):
        raise FormatError(f"{path}: trailing bytes", end)
    return values.reshape(h, w, c)


def read_keypoints(path) -> KeypointSet:
    try:
        with open(path) as fh:
            data = json.load(fh)
        points = np.asarray(data["points"], dtype=np.float64)
        jac = data.get("jacobians")
        if jac is None:
            return KeypointSet.identity(points)
        return KeypointSet(points, np.asarray(jac, dtype=np.float64))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid keypoint file ({exc})") from exc


def write_keypoints(kp: KeypointSet, path):
    with open(path, "w") as fh:
        json.dump({"points": kp.points.tolist(), "jacobians": kp.jacobians.tolist()}, fh)
