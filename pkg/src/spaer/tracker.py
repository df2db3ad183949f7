"""End-to-end sequence pipeline: features -> refinement -> rigid transforms.

All transforms are about the world origin, which the simulator places at the
grid center; evaluation expresses estimates and ground truth in the same
convention before differencing.
"""
from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .diffeo import DeformationField, RegistrationConfig, exponentiate, \
    register_svf, warp
from .eqfeatures import FilterBank, PointCloud, representation
from .errors import DegenerateGeometry, GridMismatch, LengthMismatch
from .geometry import RigidTransform, compose, geodesic_angle, inverse
from .procrustes import estimate_rigid
from .temporal import AttentionParams, TokenSequence, attend
from .volume import Volume, dice, resample_rigid, ssd


@dataclass(frozen=True)
class MotionSequence:
    """T-1 pairwise transforms (t -> t+1) and their accumulation to frame 0."""

    transforms: tuple[RigidTransform, ...]
    residual_fields: tuple[DeformationField | None, ...] | None = None

    @property
    def accumulated(self) -> list[RigidTransform]:
        acc = [RigidTransform.identity()]
        for q in self.transforms:
            acc.append(compose(q, acc[-1]))
        return acc

    def __len__(self):
        return len(self.transforms)


@dataclass
class TrackingReport:
    translation_errors_mm: np.ndarray  # per pair
    angular_errors_deg: np.ndarray
    dice_scores: np.ndarray  # per frame, aligned vs reference
    ssd_pre: np.ndarray  # per pair, before alignment
    ssd_post: np.ndarray  # per pair, after alignment
    seconds_per_pair: np.ndarray
    accumulated_translation_errors_mm: np.ndarray | None = None
    accumulated_angular_errors_deg: np.ndarray | None = None

    def summary(self) -> dict:
        def ms(x):
            x = np.asarray(x, dtype=float)
            x = x[np.isfinite(x)]
            if x.size == 0:
                return {"mean": float("nan"), "std": float("nan")}
            return {"mean": float(np.mean(x)), "std": float(np.std(x))}
        out = {
            "translation_error_mm": ms(self.translation_errors_mm),
            "angular_error_deg": ms(self.angular_errors_deg),
            "dice": ms(self.dice_scores),
            "ssd_pre": ms(self.ssd_pre),
            "ssd_post": ms(self.ssd_post),
            "seconds_per_pair": ms(self.seconds_per_pair),
            "seconds_total": float(np.sum(self.seconds_per_pair)),
        }
        if self.accumulated_translation_errors_mm is not None:
            out["accumulated_translation_error_mm"] = \
                ms(self.accumulated_translation_errors_mm)
            out["accumulated_angular_error_deg"] = \
                ms(self.accumulated_angular_errors_deg)
        return out


@dataclass(frozen=True)
class TrackOptions:
    diffeo: bool = False
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)


def tokens_from_clouds(clouds: list[PointCloud], reference: Volume) -> TokenSequence:
    """Flatten per-frame points to (T, 3K) tokens in normalized grid units."""
    center = reference.center()
    half_extent = float(np.max((np.array(reference.dims) - 1) / 2.0
                               * reference.spacing))
    tokens = np.stack([((c.points - center) / half_extent).ravel()
                       for c in clouds])
    return TokenSequence(tokens, np.arange(len(clouds), dtype=float))


def clouds_from_tokens(seq: TokenSequence, clouds: list[PointCloud],
                       reference: Volume) -> list[PointCloud]:
    """Invert tokens_from_clouds, reusing the original channel masses."""
    center = reference.center()
    half_extent = float(np.max((np.array(reference.dims) - 1) / 2.0
                               * reference.spacing))
    out = []
    for t, cloud in enumerate(clouds):
        pts = seq.tokens[t].reshape(-1, 3) * half_extent + center
        out.append(PointCloud(pts, cloud.masses))
    return out


def track(frames: list[Volume], bank: FilterBank,
          params: AttentionParams | None = None,
          opts: TrackOptions = TrackOptions()) -> tuple[MotionSequence, np.ndarray]:
    """Estimate pairwise rigid motion across a sequence.

    Returns the motion and the per-pair wall-clock seconds (feature time for
    both frames is attributed to the pair that consumes them).
    """
    if len(frames) < 2:
        raise LengthMismatch("need at least two frames")
    for f in frames[1:]:
        if not frames[0].same_grid(f):
            raise GridMismatch("sequence frames on different grids")

    t0 = time.perf_counter()
    clouds = [representation(bank, f) for f in frames]
    if params is not None:
        seq = tokens_from_clouds(clouds, frames[0])
        refined = attend(seq, params)
        clouds = clouds_from_tokens(refined, clouds, frames[0])
    feature_seconds = time.perf_counter() - t0

    transforms = []
    seconds = []
    n_pairs = len(frames) - 1
    for t in range(n_pairs):
        t1 = time.perf_counter()
        try:
            result = estimate_rigid(clouds[t], clouds[t + 1])
        except DegenerateGeometry as exc:
            raise DegenerateGeometry(f"frame pair {t}->{t + 1}: {exc}") from exc
        transforms.append(result.transform)
        seconds.append(time.perf_counter() - t1 + feature_seconds / n_pairs)

    residuals = None
    if opts.diffeo:
        # residual fields live in frame-0 space, where align() applies them:
        # each rigidly aligned frame is registered onto the corrected frame
        # before it, so the chain of pairwise corrections stays consistent
        residuals = []
        acc = MotionSequence(tuple(transforms)).accumulated
        prev = frames[0]
        for t in range(n_pairs):
            t1 = time.perf_counter()
            cur = resample_rigid(frames[t + 1], acc[t + 1])
            v, _ = register_svf(cur, prev, opts.registration)
            phi = exponentiate(v, opts.registration.exp_steps)
            residuals.append(phi)
            prev = warp(cur, phi)
            seconds[t] += time.perf_counter() - t1
        residuals = tuple(residuals)

    return MotionSequence(tuple(transforms), residuals), np.array(seconds)


def align(frames: list[Volume], motion: MotionSequence) -> list[Volume]:
    """Resample every frame into frame-0 space via the accumulated transforms."""
    acc = motion.accumulated
    if len(acc) != len(frames):
        raise LengthMismatch(f"{len(frames)} frames vs {len(acc)} transforms")
    out = []
    for t, frame in enumerate(frames):
        if not frame.same_grid(frames[0]):
            raise GridMismatch("sequence frames on different grids")
        aligned = resample_rigid(frame, acc[t])
        if motion.residual_fields is not None and t > 0:
            phi = motion.residual_fields[t - 1]
            if phi is not None:
                aligned = warp(aligned, phi)
        out.append(aligned)
    return out


def evaluate(estimated: MotionSequence, truth: MotionSequence,
             aligned: list[Volume] | None = None,
             reference: Volume | None = None,
             unaligned: list[Volume] | None = None,
             seconds_per_pair: np.ndarray | None = None) -> TrackingReport:
    """Per-pair translation/angular errors plus optional image metrics."""
    if len(estimated) != len(truth):
        raise LengthMismatch(f"{len(estimated)} estimated vs {len(truth)} truth pairs")
    n = len(estimated)
    trans_err = np.zeros(n)
    ang_err = np.zeros(n)
    for t in range(n):
        est, ref = estimated.transforms[t], truth.transforms[t]
        trans_err[t] = float(np.linalg.norm(est.translation - ref.translation))
        ang_err[t] = geodesic_angle(est.rotation, ref.rotation)

    acc_trans = np.zeros(n)
    acc_ang = np.zeros(n)
    for t, (ea, ta) in enumerate(zip(estimated.accumulated[1:],
                                     truth.accumulated[1:])):
        acc_trans[t] = float(np.linalg.norm(ea.translation - ta.translation))
        acc_ang[t] = geodesic_angle(ea.rotation, ta.rotation)

    n_frames = n + 1
    dice_scores = np.full(n_frames, np.nan)
    ssd_pre = np.full(n, np.nan)
    ssd_post = np.full(n, np.nan)
    if aligned is not None and reference is not None:
        for t in range(n_frames):
            dice_scores[t] = dice(aligned[t], reference, 0.5)
        for t in range(n):
            ssd_post[t] = ssd(aligned[t + 1], aligned[t])
    if unaligned is not None:
        for t in range(n):
            ssd_pre[t] = ssd(unaligned[t + 1], unaligned[t])

    secs = np.zeros(n) if seconds_per_pair is None else np.asarray(seconds_per_pair)
    return TrackingReport(trans_err, ang_err, dice_scores, ssd_pre, ssd_post,
                          secs, acc_trans, acc_ang)


def report_to_csv(report: TrackingReport) -> str:
    out = io.StringIO()
    out.write("# spaer-csv v1\n")
    out.write("pair,trans_err_mm,ang_err_deg,dice,ssd_pre,ssd_post,secs\n")
    for i in range(len(report.translation_errors_mm)):
        d = report.dice_scores[i + 1] if i + 1 < len(report.dice_scores) else np.nan
        values = [report.translation_errors_mm[i], report.angular_errors_deg[i],
                  d, report.ssd_pre[i], report.ssd_post[i],
                  report.seconds_per_pair[i]]
        out.write(f"{i}," + ",".join(repr(float(v)) for v in values) + "\n")
    return out.getvalue()


def report_to_json(report: TrackingReport) -> str:
    return json.dumps(report.summary(), indent=2) + "\n"
