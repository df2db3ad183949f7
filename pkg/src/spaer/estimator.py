"""Scikit-learn style facade over the tracking pipeline.

`MotionTracker` composes with sklearn tooling (get_params/set_params,
clone): `fit` trains the attention refiner on simulated sequences with
ground-truth motion, `predict` estimates motion for new sequences, and
`transform` returns motion-corrected sequences.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import tracker
from .eqfeatures import default_bank
from .errors import LengthMismatch
from .simulator import pairwise_from_trajectory
from .temporal import TrainConfig, train
from .tracker import MotionSequence, TrackOptions, clouds_from_tokens, \
    tokens_from_clouds
from .volume import Volume


class MotionTracker(BaseEstimator):
    """Rigid motion tracker for temporal sequences of 3D volumes.

    Parameters follow sklearn conventions: everything passed to __init__ is
    stored verbatim; fitted state lives in trailing-underscore attributes.
    """

    def __init__(self, use_attention=False, diffeo=False, epochs=20,
                 learning_rate=1e-5, batch_size=4, heads=4, seed=0,
                 val_fraction=0.25):
        self.use_attention = use_attention
        self.diffeo = diffeo
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.heads = heads
        self.seed = seed
        self.val_fraction = val_fraction

    def fit(self, X, y=None):
        """Fit the tracker.

        X: list of sequences (each a list of Volume). y: matching list of
        ground-truth trajectories (list of RigidTransform, accumulated, first
        element identity); required when use_attention is set.
        """
        self.bank_ = default_bank()
        self.params_ = None
        self.history_ = []
        if not self.use_attention:
            return self
        if y is None:
            raise ValueError("use_attention requires ground-truth trajectories y")
        if len(X) != len(y):
            raise LengthMismatch(f"{len(X)} sequences vs {len(y)} trajectories")

        dataset = [build_training_pair(frames, traj, self.bank_)
                   for frames, traj in zip(X, y)]
        n_val = max(1, int(round(self.val_fraction * len(dataset)))) \
            if len(dataset) > 1 else 0
        train_set = dataset[:len(dataset) - n_val] if n_val else dataset
        val_set = dataset[len(dataset) - n_val:] if n_val else []
        cfg = TrainConfig(learning_rate=self.learning_rate,
                          batch_size=self.batch_size, epochs=self.epochs,
                          seed=self.seed, heads=self.heads)
        result = train(train_set, val_set, self.bank_, cfg)
        self.params_ = result.params
        self.bank_ = result.bank
        self.history_ = result.history
        return self

    def predict(self, X) -> list[MotionSequence]:
        """Estimated motion for each sequence in X."""
        self._check_fitted()
        opts = TrackOptions(diffeo=self.diffeo)
        return [tracker.track(frames, self.bank_, self.params_, opts)[0]
                for frames in X]

    def transform(self, X) -> list[list[Volume]]:
        """Motion-corrected (frame-0 aligned) version of each sequence."""
        self._check_fitted()
        opts = TrackOptions(diffeo=self.diffeo)
        out = []
        for frames in X:
            motion, _ = tracker.track(frames, self.bank_, self.params_, opts)
            out.append(tracker.align(frames, motion))
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)

    def _check_fitted(self):
        if not hasattr(self, "bank_"):
            raise RuntimeError("MotionTracker is not fitted; call fit() first")


def build_training_pair(frames, trajectory, bank):
    """(noisy tokens, clean targets) for one simulated sequence.

    Targets are the frame-0 point cloud pushed through the ground-truth
    trajectory: the fixed point the refiner should map corrupted tokens to.
    """
    from .eqfeatures import PointCloud, representation
    from .geometry import apply

    if len(frames) != len(trajectory):
        raise LengthMismatch(f"{len(frames)} frames vs {len(trajectory)} transforms")
    clouds = [representation(bank, f) for f in frames]
    seq = tokens_from_clouds(clouds, frames[0])
    ref = clouds[0]
    target_clouds = [PointCloud(apply(q, ref.points), ref.masses)
                     for q in trajectory]
    target = tokens_from_clouds(target_clouds, frames[0]).tokens
    return seq, target
