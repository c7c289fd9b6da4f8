"""Coarse-to-fine residual refinement of the prior flow and occlusion logits.

Each step works at twice the previous resolution.  Residuals are
accumulated and added to a fresh resize of the prior, so the prior never
passes through the lossy 1/32 bottleneck more than once::

    F_i = Resize(F_0) + dF_i + up(dF_{i-1}) + up(up(dF_{i-2})) + ...

Occlusion is refined the same way in logit space; the sigmoid is applied
only when a map leaves this module.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from . import nets
from .correlation import CorrelationVolume, lookup
from .errors import InvalidArgument, InvalidConfiguration
from .grid import bilinear_sample, identity_grid, resize_field, resize_tensor
from .prior import PriorMotionOutput
from .rng import SplitMix64, derive_seed

FULL_ITERATIONS = 6


def resolution_schedule(image_res, iterations: int | None = None) -> list[tuple[int, int]]:
    """Doubling resolutions from ``(H/32, W/32)``; fewer iterations drop the top levels."""
    H, W = int(image_res[0]), int(image_res[1])
    if H <= 0 or W <= 0 or H % 32 or W % 32:
        raise InvalidArgument(f"image resolution {(H, W)} must be a positive multiple of 32")
    n = FULL_ITERATIONS if iterations is None else int(iterations)
    if not 1 <= n <= FULL_ITERATIONS:
        raise InvalidArgument(f"iterations must be in 1..{FULL_ITERATIONS}, got {n}")
    return [((H // 32) << i, (W // 32) << i) for i in range(n)]


@dataclass(frozen=True)
class RefinementState:
    iteration: int
    flow: np.ndarray
    occlusion_logits: np.ndarray
    flow_residual: np.ndarray
    occlusion_residual: np.ndarray
    prior: PriorMotionOutput

    @property
    def resolution(self):
        return self.flow.shape[:2]


class UpdaterNetwork(Protocol):
    def __call__(self, flow, corr, warped) -> tuple[np.ndarray, np.ndarray]:
        """Flow residual ``(h, w, 2)`` and occlusion-logit residual ``(h, w)``."""
        ...


class ZeroUpdater:
    """Stub updater that never moves the flow."""

    def __call__(self, flow, corr, warped):
        h, w = flow.shape[:2]
        return np.zeros((h, w, 2)), np.zeros((h, w))


class SeededUpdater:
    """Four conv blocks with seeded weights, shared by every iteration.

    Correlation features and the current flow (as displacement) go through
    separate blocks, are fused into a motion feature, and a head combines
    that with the flow and the warped source feature into three channels.
    The head is scaled by ``out_scale`` so outputs stay small perturbations.
    """

    def __init__(self, corr_channels, feature_channels, seed=0, width=64, out_scale=1e-2):
        rng = SplitMix64(derive_seed(seed, "updater"))
        self.corr_block = nets.Conv(rng, corr_channels, width)
        self.flow_block = nets.Conv(rng, 2, width)
        self.motion_block = nets.Conv(rng, 2 * width, width)
        self.head = nets.Conv(rng, width + 2 + feature_channels, 3, gain=out_scale)

    def __call__(self, flow, corr, warped):
        disp = flow - identity_grid(*flow.shape[:2])
        c = nets.relu(self.corr_block(corr))
        f = nets.relu(self.flow_block(disp))
        motion = nets.relu(self.motion_block(np.concatenate([c, f], axis=-1)))
        out = self.head(np.concatenate([motion, disp, warped], axis=-1))
        return out[..., :2], out[..., 2]


def init_refinement(prior: PriorMotionOutput) -> RefinementState:
    h, w = prior.resolution
    if h % 8 or w % 8 or prior.occlusion_logits.shape != (h, w):
        raise InvalidArgument(f"prior at {(h, w)} cannot be downsampled by 8 onto the refinement grid")
    res = (h // 8, w // 8)
    if min(res) < 2:
        raise InvalidArgument(f"prior resolution {(h, w)} too small for the refinement grid")
    return RefinementState(
        iteration=0,
        flow=resize_field(prior.flow, res),
        occlusion_logits=resize_tensor(prior.occlusion_logits, res),
        flow_residual=np.zeros(res + (2,)),
        occlusion_residual=np.zeros(res),
        prior=prior,
    )


def refine_step(state: RefinementState, volume: CorrelationVolume, src_feat, updater, r: int) -> RefinementState:
    h, w = state.resolution
    expected = (h, w) if state.iteration == 0 else (2 * h, 2 * w)
    target = tuple(np.shape(src_feat)[:2])
    if target != expected:
        raise InvalidArgument(f"source feature at {target}, refinement step expects {expected}")
    flow_up = resize_field(state.flow, target)
    acc_flow = resize_tensor(state.flow_residual, target)
    acc_occ = resize_tensor(state.occlusion_residual, target)
    corr = lookup(volume, flow_up, r)
    warped = bilinear_sample(src_feat, flow_up)
    d_flow, d_occ = updater(flow_up, corr, warped)
    acc_flow = acc_flow + d_flow
    acc_occ = acc_occ + d_occ
    return replace(
        state,
        iteration=state.iteration + 1,
        flow=resize_field(state.prior.flow, target) + acc_flow,
        occlusion_logits=resize_tensor(state.prior.occlusion_logits, target) + acc_occ,
        flow_residual=acc_flow,
        occlusion_residual=acc_occ,
    )


def iterate_refinement(prior, volume, feature_pyramid, updater, r):
    """Yield the state after every refinement step."""
    h, w = prior.resolution
    n = len(feature_pyramid)
    if not 1 <= n <= FULL_ITERATIONS:
        raise InvalidConfiguration(f"feature pyramid has {n} levels, expected 1..{FULL_ITERATIONS}")
    schedule = resolution_schedule((4 * h, 4 * w), n)
    got = [tuple(np.shape(f)[:2]) for f in feature_pyramid]
    if got != schedule:
        raise InvalidConfiguration(f"feature pyramid resolutions {got} do not follow the schedule {schedule}")
    state = init_refinement(prior)
    for feat in feature_pyramid:
        state = refine_step(state, volume, feat, updater, r)
        yield state


def run_refinement(prior, volume, feature_pyramid, updater, r):
    """All ``(flow, occlusion)`` pairs in ascending resolution; occlusion is post-sigmoid."""
    return [(s.flow, nets.sigmoid(s.occlusion_logits)) for s in iterate_refinement(prior, volume, feature_pyramid, updater, r)]
