"""Multi-scale source encoding and occlusion-aware decoding."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from . import nets
from .errors import InvalidArgument, InvalidConfiguration
from .grid import bilinear_sample, resize_tensor
from .refinement import FULL_ITERATIONS, resolution_schedule
from .rng import SplitMix64, derive_seed


class ImageEncoder(Protocol):
    def __call__(self, source, schedule) -> list[np.ndarray]: ...


class ImageDecoder(Protocol):
    def between(self, out, target, level: int) -> np.ndarray:
        """ResBlock + UpBlock from level ``level`` to resolution ``target``."""
        ...

    def finish(self, out) -> np.ndarray: ...


class StubImageEncoder:
    """Source image resized to every level; no learned parameters."""

    def __call__(self, source, schedule):
        return [resize_tensor(source, res) for res in schedule]


class SeededImageEncoder:
    def __init__(self, channels=64, seed=0):
        rng = SplitMix64(derive_seed(seed, "image-encoder"))
        self.channels = channels
        self.stem = nets.Conv(rng, 3, channels)
        self.down = [nets.Conv(rng, channels, channels) for _ in range(FULL_ITERATIONS - 1)]

    def __call__(self, source, schedule):
        x = nets.relu(self.stem(resize_tensor(source, schedule[-1])))
        levels = [x]
        for conv in self.down[: len(schedule) - 1]:
            x = nets.relu(conv(nets.avg_pool2(x)))
            levels.append(x)
        return levels[::-1]


class StubDecoder:
    """Resizes between levels and returns the last composite untouched (no sigmoid)."""

    def between(self, out, target, level):
        return resize_tensor(out, target)

    def finish(self, out):
        if out.shape[-1] != 3:
            raise InvalidConfiguration(f"stub decoder needs 3-channel features, got {out.shape[-1]}")
        return out


class SeededDecoder:
    """Pre-activation 2-layer ResBlock, then nearest upsample + 3x3 conv, per level."""

    def __init__(self, channels=64, seed=0):
        rng = SplitMix64(derive_seed(seed, "decoder"))
        self.res = [(nets.Conv(rng, channels, channels), nets.Conv(rng, channels, channels)) for _ in range(FULL_ITERATIONS - 1)]
        self.up = [nets.Conv(rng, channels, channels) for _ in range(FULL_ITERATIONS - 1)]
        self.project = nets.Conv(rng, channels, 3)

    def between(self, out, target, level):
        c1, c2 = self.res[level]
        x = out + c2(nets.relu(c1(nets.relu(out))))
        return nets.relu(self.up[level](nets.upsample_nearest(x, target)))

    def finish(self, out):
        return nets.sigmoid(self.project(out))


def encode_source(encoder: ImageEncoder, source, iterations=None) -> list[np.ndarray]:
    source = np.asarray(source, dtype=np.float64)
    schedule = resolution_schedule(source.shape[:2], iterations)
    pyramid = encoder(source, schedule)
    got = [tuple(f.shape[:2]) for f in pyramid]
    if got != schedule:
        raise InvalidConfiguration(f"encoder produced levels {got}, schedule is {schedule}")
    return pyramid


def composite_layer(warped, occlusion, decoded_prev=None) -> np.ndarray:
    """``warped * O`` on the first level, else ``warped * O + prev * (1 - O)``."""
    warped = np.asarray(warped, dtype=np.float64)
    occ = np.asarray(occlusion, dtype=np.float64)
    if occ.ndim == 2:
        occ = occ[..., None]
    if occ.shape[:2] != warped.shape[:2]:
        raise InvalidArgument(f"occlusion {occ.shape[:2]} and warped feature {warped.shape[:2]} differ")
    if decoded_prev is None:
        return warped * occ
    decoded_prev = np.asarray(decoded_prev, dtype=np.float64)
    if decoded_prev.shape != warped.shape:
        raise InvalidArgument(f"decoded features {decoded_prev.shape} and warped {warped.shape} differ")
    return warped * occ + decoded_prev * (1.0 - occ)


def generate(pyramid, flows_occlusions, decoder: ImageDecoder, image_res=None) -> np.ndarray:
    """Decode the warped pyramid into an image.

    With a truncated schedule the top level is below image size; pass
    ``image_res`` to resize the result back up.
    """
    if len(pyramid) != len(flows_occlusions) or not pyramid:
        raise InvalidConfiguration(f"{len(pyramid)} feature levels but {len(flows_occlusions)} flows")
    out = None
    for level, (feat, (flow, occ)) in enumerate(zip(pyramid, flows_occlusions)):
        if tuple(flow.shape[:2]) != tuple(feat.shape[:2]):
            raise InvalidArgument(f"level {level}: flow at {flow.shape[:2]}, feature at {feat.shape[:2]}")
        warped = bilinear_sample(feat, flow)
        prev = None if out is None else decoder.between(out, feat.shape[:2], level - 1)
        out = composite_layer(warped, occ, prev)
    image = decoder.finish(out)
    if image_res is not None and tuple(image.shape[:2]) != tuple(image_res):
        image = resize_tensor(image, image_res)
    return image
