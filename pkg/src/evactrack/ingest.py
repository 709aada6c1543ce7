"""Pose-keypoint and robot-detection ingestion.

Turns per-camera detector output into pixel tracks: the subject is grounded by
an ankle keypoint, the robot by the bottom-center of its bounding box, and
occlusion gaps are repaired by linear interpolation in pixel space.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import MalformedRecord, NoUsableKeypoints, TooFewObservations
from .tracks import INTERPOLATED, OBSERVED

N_KEYPOINTS = 17
LEFT_ANKLE = 15
RIGHT_ANKLE = 16
DEFAULT_FPS = 40.0

DETECTION_HEADER = ["frame", "u_min", "v_min", "u_max", "v_max", "confidence"]


class PixelPoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True, eq=False)
class PoseFrame:
    frame_index: int
    keypoints: np.ndarray  # (17, 3): u, v, confidence in COCO order
    person_score: float

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.shape != (N_KEYPOINTS, 3):
            raise MalformedRecord(f"expected {N_KEYPOINTS} keypoints, got array of shape {kp.shape}")
        conf = kp[:, 2]
        if np.any(~np.isfinite(kp)) or np.any(conf < 0) or np.any(conf > 1):
            raise MalformedRecord(f"frame {self.frame_index}: keypoint confidences must lie in [0, 1]")
        object.__setattr__(self, "keypoints", kp)

    def keypoint(self, index: int) -> tuple[float, float, float]:
        u, v, c = self.keypoints[index]
        return float(u), float(v), float(c)


@dataclass(frozen=True)
class BBox:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise MalformedRecord(f"degenerate bounding box {self}")


class Detection(NamedTuple):
    frame: int
    bbox: BBox
    confidence: float


@dataclass(frozen=True, eq=False)
class PixelTrack:
    agent: str
    camera_id: str
    frames: np.ndarray
    uv: np.ndarray
    source: tuple[str, ...] = field(default=())
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        source = tuple(self.source) if self.source else (OBSERVED,) * len(frames)
        if len(uv) != len(frames) or len(source) != len(frames):
            raise ValueError("pixel track columns have different lengths")
        if len(frames) > 1 and not np.all(np.diff(frames) > 0):
            raise ValueError("frame indices must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "source", source)

    def __len__(self) -> int:
        return len(self.frames)


def _parse_record(obj: object) -> PoseFrame:
    if not isinstance(obj, dict):
        raise MalformedRecord(f"keypoint record must be an object, got {type(obj).__name__}")
    try:
        frame = obj["frame"]
        score = float(obj["person_score"])
        flat = obj["keypoints"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"keypoint record missing or bad field: {exc}") from None
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise MalformedRecord(f"frame must be an integer, got {frame!r}")
    if not isinstance(flat, list) or len(flat) != 3 * N_KEYPOINTS:
        n = len(flat) if isinstance(flat, list) else "non-list"
        raise MalformedRecord(f"frame {frame}: expected {3 * N_KEYPOINTS} keypoint values, got {n}")
    try:
        kp = np.array(flat, dtype=float).reshape(N_KEYPOINTS, 3)
    except (TypeError, ValueError):
        raise MalformedRecord(f"frame {frame}: non-numeric keypoint values") from None
    return PoseFrame(frame, kp, score)


def parse_pose_frames(records: Iterable[str | dict]) -> list[PoseFrame]:
    """Parse newline-delimited keypoint records into frames ordered by frame index.

    Accepts raw text lines or already-decoded objects. Persons sharing a frame
    keep their input order.
    """
    frames = []
    for rec in records:
        if isinstance(rec, str):
            if not rec.strip():
                continue
            try:
                rec = json.loads(rec)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid keypoint record: {exc}") from None
        frames.append(_parse_record(rec))
    frames.sort(key=lambda f: f.frame_index)
    return frames


def serialize_pose_frames(frames: Iterable[PoseFrame]) -> list[str]:
    out = []
    for f in frames:
        rec = {
            "frame": int(f.frame_index),
            "person_score": float(f.person_score),
            "keypoints": [float(x) for x in f.keypoints.reshape(-1)],
        }
        out.append(json.dumps(rec))
    return out


def _ground_ankle(frame: PoseFrame, threshold: float) -> tuple[float, float] | None:
    for idx in (LEFT_ANKLE, RIGHT_ANKLE):
        u, v, c = frame.keypoint(idx)
        if c >= threshold:
            return u, v
    return None


def extract_subject_track(
    frames: list[PoseFrame],
    confidence_threshold: float = 0.5,
    camera_id: str = "",
    fps: float = DEFAULT_FPS,
) -> PixelTrack:
    """Build the subject's pixel track from the left ankle, falling back to the right.

    Frames with no ankle above ``confidence_threshold`` become gaps. When several
    persons share a frame, the one nearest the previously accepted point wins;
    before any point is accepted, the highest ``person_score`` wins.
    """
    by_frame: dict[int, list[PoseFrame]] = {}
    for f in frames:
        by_frame.setdefault(f.frame_index, []).append(f)

    out_frames, out_uv = [], []
    prev = None
    for idx in sorted(by_frame):
        candidates = []
        for person in by_frame[idx]:
            ankle = _ground_ankle(person, confidence_threshold)
            if ankle is not None:
                candidates.append((person, ankle))
        if not candidates:
            continue
        if prev is None:
            _, ankle = max(candidates, key=lambda pa: pa[0].person_score)
        else:
            _, ankle = min(candidates, key=lambda pa: np.hypot(pa[1][0] - prev[0], pa[1][1] - prev[1]))
        out_frames.append(idx)
        out_uv.append(ankle)
        prev = ankle

    if not out_frames:
        raise NoUsableKeypoints(f"camera {camera_id!r}: no ankle keypoint reached confidence {confidence_threshold}")
    return PixelTrack("subject", camera_id, np.array(out_frames), np.array(out_uv), fps=fps)


def robot_point_from_bbox(b: BBox) -> PixelPoint:
    """Bottom-center of the box, i.e. where the robot meets the floor."""
    return PixelPoint((b.u_min + b.u_max) / 2.0, b.v_max)


def parse_robot_detections(lines: Iterable[str]) -> list[Detection]:
    reader = csv.reader(line for line in lines if line.strip() and not line.startswith("#"))
    header = next(reader, None)
    if header is None:
        return []
    if [h.strip() for h in header] != DETECTION_HEADER:
        raise MalformedRecord(f"unexpected detection header {header!r}")
    dets = []
    for row in reader:
        if len(row) != len(DETECTION_HEADER):
            raise MalformedRecord(f"bad detection row {row!r}")
        try:
            frame = int(row[0])
            u0, v0, u1, v1, conf = (float(x) for x in row[1:])
        except ValueError:
            raise MalformedRecord(f"non-numeric detection row {row!r}") from None
        dets.append(Detection(frame, BBox(u0, v0, u1, v1), conf))
    dets.sort(key=lambda d: d.frame)
    return dets


def format_robot_detections(dets: Iterable[Detection]) -> str:
    buf = io.StringIO()
    buf.write(",".join(DETECTION_HEADER) + "\n")
    for d in dets:
        b = d.bbox
        buf.write(f"{d.frame},{b.u_min:.3f},{b.v_min:.3f},{b.u_max:.3f},{b.v_max:.3f},{d.confidence:.3f}\n")
    return buf.getvalue()


def robot_track_from_detections(
    dets: list[Detection],
    camera_id: str = "",
    min_confidence: float = 0.0,
    fps: float = DEFAULT_FPS,
) -> PixelTrack:
    """One point per frame from the most confident box at or above ``min_confidence``."""
    best: dict[int, Detection] = {}
    for d in dets:
        if d.confidence < min_confidence:
            continue
        if d.frame not in best or d.confidence > best[d.frame].confidence:
            best[d.frame] = d
    frames = sorted(best)
    uv = [robot_point_from_bbox(best[f].bbox) for f in frames]
    return PixelTrack("robot", camera_id, np.array(frames, dtype=np.int64), np.array(uv).reshape(-1, 2), fps=fps)


def fill_gaps(track: PixelTrack) -> PixelTrack:
    """Linearly interpolate missing interior frames; never extrapolate past the ends."""
    n_observed = sum(1 for s in track.source if s == OBSERVED)
    if n_observed < 2:
        raise TooFewObservations(f"camera {track.camera_id!r}: need at least 2 observed samples, got {n_observed}")
    frames = np.arange(track.frames[0], track.frames[-1] + 1)
    if len(frames) == len(track.frames):
        return track
    u = np.interp(frames, track.frames, track.uv[:, 0])
    v = np.interp(frames, track.frames, track.uv[:, 1])
    present = dict(zip(track.frames.tolist(), track.source))
    source = tuple(present.get(f, INTERPOLATED) for f in frames.tolist())
    # keep original values bit-exact at present frames
    pos = np.searchsorted(frames, track.frames)
    u[pos] = track.uv[:, 0]
    v[pos] = track.uv[:, 1]
    return PixelTrack(track.agent, track.camera_id, frames, np.column_stack([u, v]), source, track.fps)
