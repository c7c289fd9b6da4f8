"""Keypoint-prior face animation with non-prior motion refinement.

Coarse affine-keypoint motion is refined coarse-to-fine against a 4D
structure correlation volume, then source features are warped and
composited under occlusion masks.  Learned networks are replaced by
seeded deterministic stand-ins with the same input/output contracts.
"""

from .config import EngineConfig, Seeds, Stubs
from .correlation import CorrelationVolume, build_volume, encode_structures, lookup, non_prior_init
from .errors import (
    FlowForgeError,
    FormatError,
    InvalidArgument,
    InvalidConfiguration,
    ProviderError,
    SingularJacobianError,
)
from .generation import composite_layer, encode_source, generate
from .grid import bilinear_sample, bilinear_sample_jvp, identity_grid, resize_field, resize_tensor
from .losses import GeometricTransform, LossReport, equivariance_loss, perceptual_loss, total_loss
from .pipeline import Engine, animate_frame, animate_sequence, non_prior_pipeline
from .prior import FileProvider, KeypointSet, SeededNetProvider, compose_dense_flow, part_flow, prior_motion
from .refinement import RefinementState, init_refinement, refine_step, resolution_schedule, run_refinement

__version__ = "0.1.0"
