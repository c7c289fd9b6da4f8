"""Forward-only training objectives: perceptual, keypoint equivariance, and their sum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nets
from .errors import InvalidArgument
from .grid import bilinear_sample, identity_grid, resize_tensor
from .rng import SplitMix64, derive_seed

MAX_ROTATION_DEG = 15.0
SCALE_RANGE = (0.9, 1.1)
TPS_GRID = 5
TPS_DISPLACEMENT = 0.15


def _tps_kernel(d2):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d2 > 0, d2 * np.log(d2), 0.0)


@dataclass(frozen=True)
class GeometricTransform:
    """A random deformation of the image plane.

    The stored map is the *warp* ``W``: the transformed image at ``z`` reads
    the original image at ``W(z)``.  The point map used by the equivariance
    loss is its inverse, ``T = W^-1``, evaluated by :meth:`apply`.

    ``W(z) = A (z + f(z)) + b`` where ``A | b`` is ``affine`` and ``f`` is a
    thin-plate spline through ``anchors`` (absent for ``kind == "affine"``).
    """

    kind: str
    affine: np.ndarray
    anchors: np.ndarray | None = None
    targets: np.ndarray | None = None
    _coef: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("affine", "tps"):
            raise InvalidArgument(f"unknown transform kind {self.kind!r}")
        object.__setattr__(self, "affine", np.asarray(self.affine, dtype=np.float64).reshape(2, 3))
        if self.kind == "tps":
            c = np.asarray(self.anchors, dtype=np.float64)
            d = np.asarray(self.targets, dtype=np.float64) - c
            n = len(c)
            L = np.zeros((n + 3, n + 3))
            L[:n, :n] = _tps_kernel(((c[:, None] - c[None]) ** 2).sum(-1))
            L[:n, n] = 1.0
            L[:n, n + 1 :] = c
            L[n, :n] = 1.0
            L[n + 1 :, :n] = c.T
            rhs = np.zeros((n + 3, 2))
            rhs[:n] = d
            sol = np.linalg.solve(L, rhs)
            object.__setattr__(self, "anchors", c)
            object.__setattr__(self, "_coef", (sol[:n], sol[n:]))

    @classmethod
    def identity(cls):
        return cls("affine", np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, dx, dy):
        """Content moves by ``(dx, dy)``: ``T(p) = p + (dx, dy)``."""
        return cls("affine", np.array([[1.0, 0.0, -dx], [0.0, 1.0, -dy]]))

    def _spline(self, z):
        if self.kind == "affine":
            return np.zeros_like(z), np.zeros(z.shape[:-1] + (2, 2))
        w, a = self._coef
        diff = z[..., None, :] - self.anchors
        d2 = (diff**2).sum(-1)
        disp = a[0] + z @ a[1:] + _tps_kernel(d2) @ w
        with np.errstate(divide="ignore"):
            g = np.where(d2 > 0, np.log(d2) + 1.0, 0.0)
        # jac[..., i, j] = d disp_i / d z_j
        jac = a[1:].T + np.einsum("...n,...nj,ni->...ij", 2.0 * g, diff, w)
        return disp, jac

    def warp(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        disp, _ = self._spline(z)
        A, b = self.affine[:, :2], self.affine[:, 2]
        return (z + disp) @ A.T + b

    def warp_jacobian(self, z) -> np.ndarray:
        _, jac = self._spline(np.asarray(z, dtype=np.float64))
        return self.affine[:, :2] @ (np.eye(2) + jac)

    def sampling_grid(self, h, w) -> np.ndarray:
        return self.warp(identity_grid(h, w))

    def apply(self, points, iterations=50, tol=1e-13) -> np.ndarray:
        """Point map ``T = W^-1`` (exact for affine, Newton for splines)."""
        p = np.asarray(points, dtype=np.float64)
        A, b = self.affine[:, :2], self.affine[:, 2]
        q = (p - b) @ np.linalg.inv(A).T
        if self.kind == "affine":
            return q
        for _ in range(iterations):
            res = self.warp(q) - p
            if np.max(np.abs(res), initial=0.0) < tol:
                break
            q = q - np.linalg.solve(self.warp_jacobian(q), res[..., None])[..., 0]
        return q


def sample_transform(seed: int) -> GeometricTransform:
    """Random rotation/scale composed with a 5x5-anchor thin-plate spline.

    Draw order from SplitMix64(seed): rotation angle, scale, then the
    anchor displacements row-major as (dx, dy) pairs.  Draws are repeated
    until the warp Jacobian is positive at every anchor.
    """
    rng = SplitMix64(seed)
    side = np.linspace(-1.0, 1.0, TPS_GRID)
    anchors = np.stack(np.meshgrid(side, side), axis=-1).reshape(-1, 2)
    for _ in range(100):
        theta = np.deg2rad(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
        scale = rng.uniform(*SCALE_RANGE)
        disp = np.array([rng.uniform(-TPS_DISPLACEMENT, TPS_DISPLACEMENT) for _ in range(2 * len(anchors))])
        c, s = np.cos(theta), np.sin(theta)
        affine = np.array([[scale * c, -scale * s, 0.0], [scale * s, scale * c, 0.0]])
        t = GeometricTransform("tps", affine, anchors, anchors + disp.reshape(-1, 2))
        if np.all(np.linalg.det(t.warp_jacobian(anchors)) > 0):
            return t
    raise InvalidArgument(f"seed {seed} produced no invertible transform")


class SeededExtractor:
    """Three stride-2 conv layers with seeded weights; returns every layer's output."""

    def __init__(self, seed=0, widths=(16, 32, 32)):
        rng = SplitMix64(derive_seed(seed, "extractor"))
        cin = 3
        self.layers = []
        for cout in widths:
            self.layers.append(nets.Conv(rng, cin, cout, stride=2))
            cin = cout

    def __call__(self, image):
        feats = []
        x = image
        for conv in self.layers:
            x = nets.relu(conv(x))
            feats.append(x)
        return feats


def default_loss_resolutions(image_res):
    H, W = image_res
    return [(H >> i, W >> i) for i in range(4)]


def perceptual_loss(target, generated, extractor, resolutions) -> float:
    """Sum over resolutions and layers of the mean absolute feature difference."""
    target = np.asarray(target, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if not resolutions:
        raise InvalidArgument("perceptual loss needs at least one resolution")
    if target.shape != generated.shape:
        raise InvalidArgument(f"target {target.shape} and generated {generated.shape} differ")
    total = 0.0
    for res in resolutions:
        fa = extractor(resize_tensor(target, res))
        fb = extractor(resize_tensor(generated, res))
        for a, b in zip(fa, fb):
            total += float(np.mean(np.abs(a - b)))
    return total


def equivariance_loss(detector, image, transform: GeometricTransform) -> float:
    """Summed L1 distance between ``T(p_D)`` and the keypoints detected on ``T(D)``."""
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape[:2]
    p = detector.detect(image).points
    warped = bilinear_sample(image, transform.sampling_grid(H, W))
    q = detector.detect(warped).points
    return float(np.abs(transform.apply(p) - q).sum())


@dataclass(frozen=True)
class LossReport:
    perceptual: float
    equivariance: float
    total: float

    def as_dict(self):
        return {"perceptual": self.perceptual, "equivariance": self.equivariance, "total": self.total}


def total_loss(target, generated, detector, extractor, transform_sampler=sample_transform, seed=0, resolutions=None) -> LossReport:
    target = np.asarray(target, dtype=np.float64)
    if resolutions is None:
        resolutions = default_loss_resolutions(target.shape[:2])
    transform = transform_sampler(seed)
    per = perceptual_loss(target, generated, extractor, resolutions)
    equi = equivariance_loss(detector, target, transform)
    return LossReport(per, equi, per + equi)
