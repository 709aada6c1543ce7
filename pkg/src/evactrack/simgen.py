"""Synthetic robot-guided shepherding scenarios with known ground truth.

A robot drives along a polyline at constant speed; the subject runs a
first-order pursuit toward the robot's delayed position, holding a follow
distance, with speed capped at 1.4x the robot's. Truth tracks are noise-free;
noise is only added to observations, either directly in world space or in
pixel space after projecting through calibrated cameras.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from . import formats
from .errors import DegeneratePath, NotInvertible
from .geometry import (
    CameraModel,
    CameraPose,
    DepthModel,
    WidthModel,
    calibration_document,
    camera_from_dict,
    camera_to_dict,
    world_to_cameras,
)
from .ingest import BBox, Detection, PixelTrack, PoseFrame, LEFT_ANKLE, N_KEYPOINTS, RIGHT_ANKLE
from .tracks import WorldTrack

SPEED_CAP = 1.4
MAX_INTERNAL_DT = 0.005
BISECTION_TOL = 1e-10
ROBOT_BOX_WIDTH_M = 0.5
DEFAULT_WAYPOINTS = ((0.0, 0.0), (12.0, 0.0), (12.0, 10.0))


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    waypoints: tuple[tuple[float, float], ...] = DEFAULT_WAYPOINTS
    robot_speed: float = 1.0
    follow_distance: float = 1.5
    follower_gain: float = 2.0
    follower_delay: float = 0.5
    sample_rate_hz: float = 40.0
    world_noise_sigma: float = 0.0
    pixel_noise_sigma: float = 0.5
    environment_scale: float = 1.0
    cameras: tuple[CameraModel, ...] = ()
    tail_seconds: float = 0.0
    detection_dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(tuple(float(c) for c in p) for p in self.waypoints))
        object.__setattr__(self, "cameras", tuple(self.cameras))
        for name in ("robot_speed", "follow_distance", "follower_gain", "sample_rate_hz", "environment_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("follower_delay", "world_noise_sigma", "pixel_noise_sigma", "tail_seconds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 <= self.detection_dropout < 1:
            raise ValueError("detection_dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(replace(self, cameras=()))
        d["waypoints"] = [list(p) for p in self.waypoints]
        d["cameras"] = [camera_to_dict(c) for c in self.cameras]
        return {**formats.json_tag(formats.SCENARIO), **d}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        formats.check_json_tag(doc, formats.SCENARIO)
        fields = {k: v for k, v in doc.items() if k not in ("format", "version")}
        fields["cameras"] = tuple(camera_from_dict(c) for c in fields.get("cameras", []))
        fields["waypoints"] = tuple(tuple(p) for p in fields["waypoints"])
        return cls(**fields)


@dataclass
class CameraObservations:
    pose_frames: list[PoseFrame]
    detections: list[Detection]


@dataclass
class Scenario:
    config: ScenarioConfig
    robot_truth: WorldTrack
    subject_truth: WorldTrack
    robot_observed: WorldTrack
    subject_observed: WorldTrack
    cameras: dict[str, CameraObservations] = field(default_factory=dict)


class _Polyline:
    def __init__(self, waypoints):
        self.pts = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        seg = np.diff(self.pts, axis=0)
        self.seg_len = np.hypot(*seg.T) if len(seg) else np.zeros(0)
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])
        if len(self.pts) < 2 or self.length <= 0:
            raise DegeneratePath("robot path must have positive length")

    def at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self.seg_len) - 1)
        while self.seg_len[i] == 0 and i > 0:
            i -= 1
        frac = (s - self.cum[i]) / self.seg_len[i] if self.seg_len[i] > 0 else 0.0
        return self.pts[i] + frac * (self.pts[i + 1] - self.pts[i])

    def start_direction(self) -> np.ndarray:
        i = int(np.flatnonzero(self.seg_len > 0)[0])
        d = self.pts[i + 1] - self.pts[i]
        return d / np.hypot(*d)


def simulate_truth(cfg: ScenarioConfig) -> tuple[WorldTrack, WorldTrack]:
    """Noise-free (robot, subject) tracks in the scenario's output frame."""
    path = _Polyline(cfg.waypoints)
    v = cfg.robot_speed
    n_samples = int(round((path.length / v + cfg.tail_seconds) * cfg.sample_rate_hz))
    sample_dt = 1.0 / cfg.sample_rate_hz
    n_sub = max(
        1,
        math.ceil(sample_dt / MAX_INTERNAL_DT - 1e-9),
        math.ceil(sample_dt * cfg.follower_gain / 0.5 - 1e-9),
    )
    dt = sample_dt / n_sub
    vmax = SPEED_CAP * v

    def robot_at(t: float) -> np.ndarray:
        return path.at(v * t)

    subject = path.pts[0] - cfg.follow_distance * path.start_direction()
    robot_xy = np.empty((n_samples, 2))
    subject_xy = np.empty((n_samples, 2))
    for k in range(n_samples):
        t = k * sample_dt
        robot_xy[k] = robot_at(t)
        subject_xy[k] = subject
        for j in range(n_sub):
            tj = t + j * dt
            target = robot_at(tj - cfg.follower_delay)
            offset = target - subject
            dist = math.hypot(offset[0], offset[1])
            if dist <= cfg.follow_distance:
                continue
            speed = min(cfg.follower_gain * (dist - cfg.follow_distance), vmax)
            subject = subject + (speed * dt / dist) * offset

    t = np.arange(n_samples) / cfg.sample_rate_hz
    scale = cfg.environment_scale
    robot = WorldTrack("robot", t, robot_xy * scale, cfg.sample_rate_hz, camera_id=("truth",) * n_samples)
    subj = WorldTrack("subject", t, subject_xy * scale, cfg.sample_rate_hz, camera_id=("truth",) * n_samples)
    return robot, subj


def _invert_depth(depth: DepthModel, distances: np.ndarray) -> np.ndarray:
    """Pixel rows giving each distance, by bisection; NaN where out of range."""
    lo, hi = depth.valid_pixel_range
    rows = np.linspace(lo, hi, 100)
    slope = np.diff(P.polyval(rows, depth.coefficients))
    if np.all(slope > 0):
        sign = 1.0
    elif np.all(slope < 0):
        sign = -1.0
    else:
        raise NotInvertible("depth model is not monotone over its calibrated range")
    d_lo, d_hi = P.polyval([lo, hi], depth.coefficients)
    dmin, dmax = min(d_lo, d_hi), max(d_lo, d_hi)
    d = np.asarray(distances, dtype=float)
    inside = (d >= dmin) & (d <= dmax)
    a = np.full(d.shape, lo)
    b = np.full(d.shape, hi)
    while np.any(b - a > BISECTION_TOL):
        mid = 0.5 * (a + b)
        # f(mid) - d has the sign of `sign` when mid is past the root
        past = sign * (P.polyval(mid, depth.coefficients) - d) > 0
        b = np.where(past, mid, b)
        a = np.where(past, a, mid)
        if np.all(b - a <= BISECTION_TOL) or np.all(mid == 0.5 * (a + b)):
            break
    out = 0.5 * (a + b)
    out[~inside] = np.nan
    return out


def project_to_camera(
    track: WorldTrack,
    cam: CameraModel,
    noise_sigma: float = 0.0,
    seed: int | np.random.Generator | None = 0,
) -> PixelTrack:
    """Project world points to pixels; points the camera cannot see are omitted.

    Inverts the camera placement, then the depth model (bisection) and the
    lateral scale. Gaussian pixel noise is added to u and v; samples whose
    noisy row leaves the calibrated range are dropped too.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ld = world_to_cameras(track.xy, cam.pose)
    lateral, depth = ld[:, 0], ld[:, 1]
    v = _invert_depth(cam.depth, np.where(depth > 0, depth, np.nan))
    lo, hi = cam.pixel_range
    ok = np.isfinite(v) & (v >= lo) & (v <= hi)
    u = np.full_like(v, np.nan)
    u[ok] = cam.pose.principal_pixel_u + lateral[ok] / P.polyval(v[ok], cam.width.coefficients)
    if noise_sigma > 0:
        noise = rng.normal(0.0, noise_sigma, size=(len(v), 2))
        u = u + noise[:, 0]
        v = v + noise[:, 1]
    ok &= np.isfinite(u) & (u >= 0) & (u <= cam.pose.frame_width) & (v >= lo) & (v <= hi)
    frames = np.rint(track.t * track.sample_rate_hz).astype(np.int64)
    return PixelTrack(track.agent, cam.camera_id, frames[ok], np.column_stack([u[ok], v[ok]]), fps=track.sample_rate_hz)


def pose_frames_from_pixels(track: PixelTrack) -> list[PoseFrame]:
    """Keypoint records with only the ankle slots populated."""
    frames = []
    for f, (u, v) in zip(track.frames.tolist(), track.uv):
        kp = np.zeros((N_KEYPOINTS, 3))
        kp[LEFT_ANKLE] = (u, v, 0.9)
        kp[RIGHT_ANKLE] = (u, v, 0.85)
        frames.append(PoseFrame(f, kp, 0.95))
    return frames


def detections_from_pixels(track: PixelTrack, cam: CameraModel, dropout: float, rng: np.random.Generator) -> list[Detection]:
    """Robot boxes whose bottom-center is the projected ground point."""
    dets = []
    keep = rng.uniform(size=len(track)) >= dropout if dropout > 0 else np.ones(len(track), bool)
    lo, hi = cam.width.valid_pixel_range
    for f, (u, v), k in zip(track.frames.tolist(), track.uv, keep):
        if not k:
            continue
        scale = P.polyval(min(max(v, lo), hi), cam.width.coefficients)
        half = 0.5 * ROBOT_BOX_WIDTH_M / scale
        dets.append(Detection(f, BBox(u - half, v - 3 * half, u + half, v), 0.9))
    return dets


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    robot, subject = simulate_truth(cfg)
    ss = np.random.SeedSequence(cfg.seed)
    world_rng, *cam_rngs = [np.random.default_rng(s) for s in ss.spawn(1 + len(cfg.cameras))]

    def noisy(track: WorldTrack) -> WorldTrack:
        if cfg.world_noise_sigma == 0:
            return track.with_xy(track.xy.copy())
        return track.with_xy(track.xy + world_rng.normal(0.0, cfg.world_noise_sigma, size=track.xy.shape))

    robot_obs, subject_obs = noisy(robot), noisy(subject)
    cams = {}
    for cam, rng in zip(cfg.cameras, cam_rngs):
        subj_px = project_to_camera(subject_obs, cam, cfg.pixel_noise_sigma, rng)
        robot_px = project_to_camera(robot_obs, cam, cfg.pixel_noise_sigma, rng)
        cams[cam.camera_id] = CameraObservations(
            pose_frames_from_pixels(subj_px),
            detections_from_pixels(robot_px, cam, cfg.detection_dropout, rng),
        )
    return Scenario(cfg, robot, subject, robot_obs, subject_obs, cams)


def make_cohort(cfg: ScenarioConfig, n_subjects: int, jitter: float = 0.15) -> list[Scenario]:
    """Scenarios sharing the robot path, with per-subject follower parameters.

    Gain is scaled log-normally; delay and follow distance get multiplicative
    Gaussian jitter. Everything derives from ``cfg.seed``.
    """
    if n_subjects < 2:
        raise ValueError("a cohort needs at least 2 subjects")
    out = []
    for i in range(n_subjects):
        seq = np.random.SeedSequence([cfg.seed, i])
        jitter_seq, noise_seq = seq.spawn(2)
        z = np.random.default_rng(jitter_seq).normal(size=3)
        sub_cfg = replace(
            cfg,
            seed=int(noise_seq.generate_state(1)[0]),
            follower_gain=cfg.follower_gain * math.exp(jitter * z[0]),
            follower_delay=max(0.0, cfg.follower_delay * (1 + jitter * z[1])),
            follow_distance=max(0.2, cfg.follow_distance * (1 + jitter * z[2])),
        )
        out.append(generate_scenario(sub_cfg))
    return out


# --- camera rig and presets --------------------------------------------------

TRUE_DEPTH_COEFFS = (12.0, -0.027, 1.5e-5)
TRUE_WIDTH_COEFFS = (0.0125, -2e-5)
PIXEL_ROWS = (50.0, 450.0)


def default_cameras() -> tuple[CameraModel, ...]:
    """Four cameras covering the default L-shaped route (entry, room, hallway, exit)."""
    depth = DepthModel(np.array(TRUE_DEPTH_COEFFS), PIXEL_ROWS)
    width = WidthModel(np.array(TRUE_WIDTH_COEFFS), PIXEL_ROWS)
    placements = [
        ("entry", (-6.0, 0.0), "swap+-"),
        ("room", (1.0, 0.0), "swap+-"),
        ("hallway", (12.0, -3.0), "+x+y"),
        ("exit", (12.0, 3.0), "+x+y"),
    ]
    return tuple(CameraModel(CameraPose(cid, pos, mapping), depth, width) for cid, pos, mapping in placements)


def export_calibration(cam: CameraModel, n_rows: int = 12, object_width_m: float = 0.5) -> dict:
    """Calibration document sampled exactly from a camera's true models."""
    rows = np.linspace(*cam.pixel_range, n_rows)
    dist = P.polyval(rows, cam.depth.coefficients)
    scale = P.polyval(rows, cam.width.coefficients)
    return calibration_document(
        cam.camera_id,
        cam.pose.world_position,
        cam.pose.axis_mapping,
        depth_pairs=list(zip(rows, dist)),
        width_samples=[(r, object_width_m / s, object_width_m) for r, s in zip(rows, scale)],
        principal_pixel_u=cam.pose.principal_pixel_u,
        frame_width=cam.pose.frame_width,
        degrees={"depth": cam.depth.degree, "width": cam.width.degree},
    )


PRESETS = ("physical-40hz", "sim-1hz")


def preset(name: str, seed: int = 0) -> ScenarioConfig:
    """Scenario settings for the two regimes.

    ``physical-40hz``: room-scale route observed by four cameras at 40 Hz.
    ``sim-1hz``: the same layout at 10x scale with a faster robot, sampled at
    1 Hz and observed directly in world coordinates.
    """
    if name == "physical-40hz":
        return ScenarioConfig(seed=seed, cameras=default_cameras(), pixel_noise_sigma=0.5, detection_dropout=0.05)
    if name == "sim-1hz":
        return ScenarioConfig(
            seed=seed,
            robot_speed=1.3,
            sample_rate_hz=1.0,
            environment_scale=10.0,
            world_noise_sigma=0.3,
            pixel_noise_sigma=0.0,
        )
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")


def save_config(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def load_config(path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text()))
