"""Rigid motion tracking for temporal sequences of 3D volumes.

Pipeline: rotation-equivariant filter responses are reduced to per-channel
spatial means, optionally refined by a temporal self-attention model, and
aligned pairwise with a closed-form weighted rigid fit; an optional
stationary-velocity-field registration corrects residual distortion.
"""

from .eqfeatures import FilterBank, PointCloud, default_bank, representation
from .estimator import MotionTracker
from .geometry import RigidTransform, apply, compose, geodesic_angle, inverse
from .procrustes import AlignmentResult, estimate_rigid
from .simulator import SimConfig, make_phantom, make_trajectory, simulate, synthesize
from .temporal import AttentionParams, TokenSequence, TrainConfig, attend, \
    positional_encoding, train
from .tracker import MotionSequence, TrackingReport, TrackOptions, align, \
    evaluate, track
from .volume import Volume, centered_volume, dice, ncc, normalize_intensity, \
    resample_rigid, ssd, trilinear_sample

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "AttentionParams", "FilterBank", "MotionSequence",
    "MotionTracker", "PointCloud", "RigidTransform", "SimConfig",
    "TokenSequence", "TrackOptions", "TrackingReport", "TrainConfig", "Volume",
    "align", "apply", "attend", "centered_volume", "compose", "default_bank",
    "dice", "estimate_rigid", "evaluate", "geodesic_angle", "inverse",
    "make_phantom", "make_trajectory", "ncc", "normalize_intensity",
    "positional_encoding", "representation", "resample_rigid", "simulate",
    "ssd", "synthesize", "track", "train", "trilinear_sample",
]
