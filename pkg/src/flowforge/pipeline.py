"""End-to-end animation: prior motion, structure volume, refinement, generation."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .config import EngineConfig
from .correlation import (
    CorrelationVolume,
    SeededStructureEncoder,
    build_volume,
    check_structure_pair,
    encode_driving_structure,
    encode_source_structure,
    non_prior_init,
)
from .errors import FlowForgeError, InvalidArgument
from .generation import (
    SeededDecoder,
    SeededImageEncoder,
    StubDecoder,
    StubImageEncoder,
    encode_source,
    generate,
)
from .grid import resize_field
from .prior import KeypointSet, PriorMotionOutput, SeededNetProvider, prior_motion
from .refinement import SeededUpdater, ZeroUpdater, run_refinement


@contextlib.contextmanager
def stage(name, frame=None):
    """Tag errors escaping a pipeline stage with ``.stage`` (and ``.frame``)."""
    try:
        yield
    except FlowForgeError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        if frame is not None and getattr(exc, "frame", None) is None:
            exc.frame = frame
        raise


@dataclass(frozen=True)
class SourceContext:
    """Everything that depends on the source image alone."""

    source: np.ndarray
    keypoints: KeypointSet
    structure: np.ndarray
    pyramid: list


@dataclass(frozen=True)
class FrameResult:
    image: np.ndarray
    flows_occlusions: list
    prior: PriorMotionOutput
    source_kp: KeypointSet
    driving_kp: KeypointSet
    volume: CorrelationVolume


class Engine:
    """One configured animation engine; every component can be swapped out.

    Components left as ``None`` are built from ``config``: seeded reference
    networks, or stubs where ``config.stubs`` asks for them.
    """

    def __init__(self, config: EngineConfig | None = None, *, provider=None, structure_encoder=None,
                 image_encoder=None, updater=None, decoder=None):
        config = config or EngineConfig()
        self.config = config
        seeds, stubs = config.seeds, config.stubs
        self.provider = provider or SeededNetProvider(config.num_keypoints, seeds.detector, config.heatmap_sigma)
        # a supplied provider (e.g. keypoint files) fixes K for the structure encoder
        K = self.provider.num_keypoints
        self.structure_encoder = structure_encoder or SeededStructureEncoder(
            K, config.structure_channels, seeds.structure_encoder
        )
        if image_encoder is None:
            image_encoder = StubImageEncoder() if stubs.image_encoder else SeededImageEncoder(
                config.feature_channels, seeds.image_encoder
            )
        self.image_encoder = image_encoder
        if updater is None:
            feat_ch = 3 if stubs.image_encoder else config.feature_channels
            updater = ZeroUpdater() if stubs.updater else SeededUpdater(config.corr_channels, feat_ch, seeds.updater)
        self.updater = updater
        if decoder is None:
            decoder = StubDecoder() if stubs.decoder else SeededDecoder(config.feature_channels, seeds.decoder)
        self.decoder = decoder

    def prepare_source(self, source) -> SourceContext:
        source = np.asarray(source, dtype=np.float64)
        if source.ndim != 3 or source.shape[-1] != 3:
            raise InvalidArgument(f"source must be (H, W, 3), got {source.shape}")
        self.config.check_resolution(source.shape[:2])
        with stage("prior"):
            src_kp = self.provider.detect(source, "source")
        with stage("structure"):
            structure = encode_source_structure(self.structure_encoder, source, src_kp, self.config.heatmap_sigma)
        with stage("encoder"):
            pyramid = encode_source(self.image_encoder, source, self.config.iterations)
        return SourceContext(source, src_kp, structure, pyramid)

    def _driving_volume(self, ctx, drv_kp):
        H, W = ctx.source.shape[:2]
        with stage("structure"):
            drv_feat = encode_driving_structure(self.structure_encoder, drv_kp, (H // 4, W // 4), self.config.heatmap_sigma)
            check_structure_pair(ctx.structure, drv_feat)
        with stage("volume"):
            return build_volume(drv_feat, ctx.structure, self.config.pyramid_levels)

    def _refine_and_generate(self, ctx, prior, volume):
        with stage("refinement"):
            pairs = run_refinement(prior, volume, ctx.pyramid, self.updater, self.config.radius)
        if self.config.stubs.full_visibility:
            pairs = [(flow, np.ones(flow.shape[:2])) for flow, _ in pairs]
        with stage("generation"):
            image = generate(ctx.pyramid, pairs, self.decoder, ctx.source.shape[:2])
        return image, pairs

    def _check_driving(self, ctx, driving):
        driving = np.asarray(driving, dtype=np.float64)
        if driving.shape != ctx.source.shape:
            raise InvalidArgument(f"driving frame {driving.shape} does not match source {ctx.source.shape}")
        return driving

    def frame(self, ctx: SourceContext, driving, initial_driving_kp=None) -> FrameResult:
        driving = self._check_driving(ctx, driving)
        with stage("prior"):
            src_kp, drv_kp, prior = prior_motion(
                self.provider, ctx.source, driving, src_kp=ctx.keypoints, initial_driving_kp=initial_driving_kp
            )
        volume = self._driving_volume(ctx, drv_kp)
        image, pairs = self._refine_and_generate(ctx, prior, volume)
        return FrameResult(image, pairs, prior, src_kp, drv_kp, volume)

    def non_prior_frame(self, ctx: SourceContext, driving) -> FrameResult:
        """Variant whose initial flow comes from the correlation volume alone."""
        driving = self._check_driving(ctx, driving)
        with stage("prior"):
            drv_kp = self.provider.detect(driving, "driving")
        volume = self._driving_volume(ctx, drv_kp)
        H, W = ctx.source.shape[:2]
        with stage("volume"):
            flow = resize_field(non_prior_init(volume), (H // 4, W // 4))
        prior = PriorMotionOutput(flow, np.zeros((H // 4, W // 4)))
        image, pairs = self._refine_and_generate(ctx, prior, volume)
        return FrameResult(image, pairs, prior, ctx.keypoints, drv_kp, volume)

    def animate(self, source, driving):
        return self.frame(self.prepare_source(source), driving)

    def animate_sequence(self, source, driving_frames) -> list[FrameResult]:
        if len(driving_frames) == 0:
            return []
        ctx = self.prepare_source(source)
        initial = None
        if self.config.relative_motion:
            with stage("prior", frame=0):
                initial = self.provider.detect(self._check_driving(ctx, driving_frames[0]), "driving")
        results = []
        for i, driving in enumerate(driving_frames):
            try:
                results.append(self.frame(ctx, driving, initial))
            except FlowForgeError as exc:
                if getattr(exc, "frame", None) is None:
                    exc.frame = i
                raise
        return results


def animate_frame(config: EngineConfig, source, driving, **components) -> FrameResult:
    return Engine(config, **components).animate(source, driving)


def animate_sequence(config: EngineConfig, source, driving_frames, **components) -> list[np.ndarray]:
    return [r.image for r in Engine(config, **components).animate_sequence(source, driving_frames)]


def non_prior_pipeline(config: EngineConfig, source, driving, **components) -> FrameResult:
    engine = Engine(config, **components)
    return engine.non_prior_frame(engine.prepare_source(source), driving)
