"""Coarse, keypoint-driven motion: local affine part flows composed by a soft mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import nets
from .errors import FlowForgeError, InvalidArgument, ProviderError, SingularJacobianError
from .grid import identity_grid, lattice, resize_tensor
from .rng import SplitMix64, derive_seed

SINGULAR_DET = 1e-8


@dataclass(frozen=True)
class KeypointSet:
    points: np.ndarray  # (K, 2) normalized (x, y)
    jacobians: np.ndarray  # (K, 2, 2)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        jac = np.asarray(self.jacobians, dtype=np.float64).reshape(-1, 2, 2)
        if len(points) != len(jac):
            raise InvalidArgument(f"{len(points)} points but {len(jac)} jacobians")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(jac))):
            raise InvalidArgument("keypoints and jacobians must be finite")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "jacobians", jac)

    @property
    def count(self):
        return len(self.points)

    @classmethod
    def identity(cls, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return cls(points, np.tile(np.eye(2), (len(points), 1, 1)))


@dataclass(frozen=True)
class PriorMotionOutput:
    flow: np.ndarray  # (h, w, 2) at quarter resolution
    occlusion_logits: np.ndarray  # (h, w)

    @property
    def resolution(self):
        return self.flow.shape[:2]


def part_flow(src_kp: KeypointSet, drv_kp: KeypointSet, k: int, grid) -> np.ndarray:
    """Affine part flow ``p_s + A_s A_d^-1 (z - p_d)`` of keypoint ``k`` (1-based)."""
    if not 1 <= k <= src_kp.count or drv_kp.count != src_kp.count:
        raise InvalidArgument(f"keypoint index {k} out of range for K={src_kp.count}")
    a_d = drv_kp.jacobians[k - 1]
    det = float(np.linalg.det(a_d))
    if abs(det) <= SINGULAR_DET:
        raise SingularJacobianError(k, det)
    m = src_kp.jacobians[k - 1] @ np.linalg.inv(a_d)
    z = np.asarray(grid, dtype=np.float64) - drv_kp.points[k - 1]
    return src_kp.points[k - 1] + z @ m.T


def compose_dense_flow(part_flows, mask) -> np.ndarray:
    """Per-pixel convex combination of ``K + 1`` flows; channel 0 is the background."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 3 or mask.shape[-1] != len(part_flows):
        raise InvalidArgument(f"mask shape {mask.shape} does not match {len(part_flows)} part flows")
    out = np.zeros(mask.shape[:2] + (2,))
    for k, flow in enumerate(part_flows):
        flow = np.asarray(flow, dtype=np.float64)
        if flow.shape != out.shape:
            raise InvalidArgument(f"part flow {k} has shape {flow.shape}, expected {out.shape}")
        out += mask[..., k : k + 1] * flow
    return out


def render_heatmaps(kp: KeypointSet, resolution, sigma: float) -> np.ndarray:
    """Unnormalized Gaussian heatmaps, one channel per keypoint."""
    if not sigma > 0:
        raise InvalidArgument(f"heatmap sigma must be positive, got {sigma}")
    grid = identity_grid(*resolution)
    d2 = ((grid[:, :, None, :] - kp.points[None, None]) ** 2).sum(-1)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def softmax_mask(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InvalidArgument("mask logits contain non-finite values")
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def soft_argmax(scores) -> np.ndarray:
    """Expected normalized coordinate under a spatial softmax, per channel of ``(h, w, K)`` scores."""
    h, w, K = scores.shape
    flat = scores.reshape(h * w, K)
    p = np.exp(flat - flat.max(axis=0))
    p /= p.sum(axis=0)
    grid = lattice(h, w).reshape(h * w, 2)
    return p.T @ grid


def relative_keypoints(src_kp: KeypointSet, drv_kp: KeypointSet, initial_kp: KeypointSet) -> KeypointSet:
    """Transfer the motion of ``drv_kp`` relative to ``initial_kp`` onto the source keypoints."""
    points = drv_kp.points - initial_kp.points + src_kp.points
    jac = drv_kp.jacobians @ np.linalg.inv(initial_kp.jacobians) @ src_kp.jacobians
    return KeypointSet(points, jac)


class PriorMotionProvider(Protocol):
    num_keypoints: int

    def detect(self, image, role: str = "driving") -> KeypointSet: ...

    def motion_maps(self, source, driving, src_kp, drv_kp, resolution) -> tuple[np.ndarray, np.ndarray]:
        """Composition mask ``(h, w, K + 1)`` and occlusion logits ``(h, w)``."""
        ...


class FileProvider:
    """Fixed keypoints (and optionally mask / occlusion rasters) loaded from disk."""

    def __init__(self, source_kp: KeypointSet, driving_kp: KeypointSet, mask=None, occlusion_logits=None):
        if source_kp.count != driving_kp.count:
            raise InvalidArgument("source and driving keypoint counts differ")
        self.source_kp = source_kp
        self.driving_kp = driving_kp
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)
        self.occlusion_logits = None if occlusion_logits is None else np.asarray(occlusion_logits, dtype=np.float64)
        self.num_keypoints = source_kp.count

    @classmethod
    def from_files(cls, source_path, driving_path, mask_path=None, occlusion_path=None):
        from . import io

        mask = io.read_raster(mask_path) if mask_path else None
        occ = io.read_raster(occlusion_path)[..., 0] if occlusion_path else None
        return cls(io.read_keypoints(source_path), io.read_keypoints(driving_path), mask, occ)

    def detect(self, image, role="driving"):
        return self.source_kp if role == "source" else self.driving_kp

    def motion_maps(self, source, driving, src_kp, drv_kp, resolution):
        h, w = resolution
        if self.mask is None:
            mask = np.zeros((h, w, self.num_keypoints + 1))
            mask[..., 0] = 1.0
        else:
            mask = self.mask
            if mask.shape != (h, w, self.num_keypoints + 1):
                raise ProviderError(f"mask raster is {mask.shape}, expected {(h, w, self.num_keypoints + 1)}")
        occ = np.zeros((h, w)) if self.occlusion_logits is None else self.occlusion_logits
        if occ.shape != (h, w):
            raise ProviderError(f"occlusion raster is {occ.shape}, expected {(h, w)}")
        return mask, occ


class SeededNetProvider:
    """Keypoint detector and dense-motion head with seeded random weights.

    The detector runs a small conv stack at quarter resolution and reads
    keypoints out with a soft-argmax; jacobians are ``I + 0.1 tanh(.)`` so
    they are never singular.  The dense-motion head sees the heatmap
    difference and the downsampled source.
    """

    def __init__(self, num_keypoints=10, seed=0, sigma=0.1, width=32, sharpness=10.0):
        self.num_keypoints = num_keypoints
        self.sigma = sigma
        self.sharpness = sharpness
        K = num_keypoints
        rng = SplitMix64(derive_seed(seed, "detector"))
        self.det1 = nets.Conv(rng, 3, width)
        self.det2 = nets.Conv(rng, width, width)
        self.det_out = nets.Conv(rng, width, 5 * K)
        rng = SplitMix64(derive_seed(seed, "dense-motion"))
        self.dm1 = nets.Conv(rng, K + 3, width)
        self.dm_out = nets.Conv(rng, width, K + 2)

    def detect(self, image, role="driving"):
        image = np.asarray(image, dtype=np.float64)
        H, W = image.shape[:2]
        x = resize_tensor(image, (H // 4, W // 4))
        x = nets.relu(self.det2(nets.relu(self.det1(x))))
        out = self.det_out(x)
        K = self.num_keypoints
        scores = out[..., :K] * self.sharpness
        points = soft_argmax(scores)
        h, w = scores.shape[:2]
        flat = scores.reshape(h * w, K)
        p = np.exp(flat - flat.max(axis=0))
        p /= p.sum(axis=0)
        raw = np.einsum("nk,nkj->kj", p, out[..., K:].reshape(h * w, K, 4))
        jac = np.eye(2) + 0.1 * np.tanh(raw).reshape(K, 2, 2)
        return KeypointSet(points, jac)

    def motion_maps(self, source, driving, src_kp, drv_kp, resolution):
        diff = render_heatmaps(drv_kp, resolution, self.sigma) - render_heatmaps(src_kp, resolution, self.sigma)
        x = np.concatenate([diff, resize_tensor(source, resolution)], axis=-1)
        out = self.dm_out(nets.relu(self.dm1(x)))
        K = self.num_keypoints
        return softmax_mask(out[..., : K + 1]), out[..., K + 1]


def prior_motion(provider: PriorMotionProvider, source, driving, *, src_kp=None, initial_driving_kp=None):
    """Keypoints for both images and the composed quarter-resolution flow.

    ``src_kp`` skips source detection (cached by the pipeline).  With
    ``initial_driving_kp`` the driving keypoints are transferred relative
    to that reference frame before the part flows are built.
    """
    source = np.asarray(source, dtype=np.float64)
    driving = np.asarray(driving, dtype=np.float64)
    if source.shape != driving.shape:
        raise InvalidArgument(f"source {source.shape} and driving {driving.shape} differ")
    H, W = source.shape[:2]
    if H % 4 or W % 4 or H < 8 or W < 8:
        raise InvalidArgument(f"image resolution {(H, W)} must be a multiple of 4 and at least 8")
    res = (H // 4, W // 4)
    try:
        if src_kp is None:
            src_kp = provider.detect(source, "source")
        drv_kp = provider.detect(driving, "driving")
        if initial_driving_kp is not None:
            drv_kp = relative_keypoints(src_kp, drv_kp, initial_driving_kp)
        mask, occ = provider.motion_maps(source, driving, src_kp, drv_kp, res)
    except FlowForgeError:
        raise
    except Exception as exc:
        raise ProviderError(f"prior motion provider failed: {exc}") from exc
    grid = identity_grid(*res)
    flows = [grid] + [part_flow(src_kp, drv_kp, k, grid) for k in range(1, src_kp.count + 1)]
    flow = compose_dense_flow(flows, mask)
    return src_kp, drv_kp, PriorMotionOutput(flow, np.asarray(occ, dtype=np.float64))
