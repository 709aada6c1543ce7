"""Stage chaining shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NoUsableKeypoints, TooFewObservations, InsufficientPoints
from .filter import SgConfig, smooth_track
from .geometry import CameraModel, calibrate_camera, pixel_track_to_world, stitch_tracks
from .ingest import extract_subject_track, fill_gaps, robot_track_from_detections
from .simgen import CameraObservations, Scenario, export_calibration, make_cohort, preset
from .tracks import WorldTrack

log = logging.getLogger(__name__)

TrackPair = tuple[WorldTrack, WorldTrack]


@dataclass(frozen=True)
class IngestConfig:
    confidence_threshold: float = 0.5
    min_detection_confidence: float = 0.0
    max_conflict_m: float = 1.0


def align_tracks(subject: WorldTrack, robot: WorldTrack) -> TrackPair:
    """Crop both tracks to the sample instants they share."""
    rate = subject.sample_rate_hz
    ks = np.rint(subject.t * rate).astype(np.int64)
    kr = np.rint(robot.t * rate).astype(np.int64)
    lo, hi = max(ks[0], kr[0]), min(ks[-1], kr[-1])
    if hi < lo:
        raise InsufficientPoints("subject and robot tracks do not overlap in time")

    def crop(tr: WorldTrack, k: np.ndarray) -> WorldTrack:
        sel = (k >= lo) & (k <= hi)
        idx = np.flatnonzero(sel)
        return WorldTrack(
            tr.agent,
            k[sel] / rate,
            tr.xy[sel],
            rate,
            tuple(tr.source[i] for i in idx),
            tuple(tr.camera_id[i] for i in idx),
        )

    return crop(subject, ks), crop(robot, kr)


def world_segments(
    cameras: Sequence[CameraModel],
    observations: Mapping[str, CameraObservations],
    fps: float,
    cfg: IngestConfig = IngestConfig(),
) -> tuple[list[WorldTrack], list[WorldTrack]]:
    """Per-camera world segments for the subject and the robot."""
    subj_segs, robot_segs = [], []
    for cam in cameras:
        obs = observations.get(cam.camera_id)
        if obs is None:
            continue
        try:
            px = fill_gaps(extract_subject_track(obs.pose_frames, cfg.confidence_threshold, cam.camera_id, fps))
            subj_segs.append(pixel_track_to_world(px, cam))
        except (NoUsableKeypoints, TooFewObservations) as exc:
            log.debug("camera %s: no subject segment (%s)", cam.camera_id, exc)
        try:
            px = fill_gaps(robot_track_from_detections(obs.detections, cam.camera_id, cfg.min_detection_confidence, fps))
            robot_segs.append(pixel_track_to_world(px, cam))
        except TooFewObservations as exc:
            log.debug("camera %s: no robot segment (%s)", cam.camera_id, exc)
    return subj_segs, robot_segs


def reconstruct_tracks(
    cameras: Sequence[CameraModel],
    observations: Mapping[str, CameraObservations],
    fps: float,
    sg: SgConfig | None = SgConfig(),
    cfg: IngestConfig = IngestConfig(),
) -> TrackPair:
    """Ingest -> world conversion -> stitching -> smoothing -> alignment."""
    subj_segs, robot_segs = world_segments(cameras, observations, fps, cfg)
    subject = stitch_tracks(subj_segs, cfg.max_conflict_m)
    robot = stitch_tracks(robot_segs, cfg.max_conflict_m)
    if sg is not None:
        subject, robot = smooth_track(subject, sg), smooth_track(robot, sg)
    return align_tracks(subject, robot)


def calibrated_cameras(true_cameras: Sequence[CameraModel]) -> list[CameraModel]:
    """Refit every camera from calibration pairs sampled off its true models."""
    return [calibrate_camera(export_calibration(cam))[0] for cam in true_cameras]


def subject_ids(n: int) -> list[str]:
    return [f"S{i + 1:02d}" for i in range(n)]


def physical_cohort(n_subjects: int, seed: int, jitter: float = 0.15) -> list[Scenario]:
    return make_cohort(preset("physical-40hz", seed), n_subjects, jitter)


def camera_cohort_tracks(
    scenarios: Sequence[Scenario],
    sg: SgConfig | None = SgConfig(),
    cfg: IngestConfig = IngestConfig(),
) -> dict[str, TrackPair]:
    """Reconstruct every scenario's tracks from its camera observations."""
    out = {}
    for sid, sc in zip(subject_ids(len(scenarios)), scenarios):
        cams = calibrated_cameras(sc.config.cameras)
        out[sid] = reconstruct_tracks(cams, sc.cameras, sc.config.sample_rate_hz, sg, cfg)
    return out


def world_cohort_tracks(scenarios: Sequence[Scenario], prefix: str = "Sim") -> dict[str, TrackPair]:
    """Directly observed world tracks (no camera stage)."""
    return {f"{prefix}{i + 1}": (sc.subject_observed, sc.robot_observed) for i, sc in enumerate(scenarios)}


def sim_cohort(n_runs: int, seed: int, jitter: float = 0.15) -> list[Scenario]:
    return make_cohort(preset("sim-1hz", seed), n_runs, jitter)
