"""Per-camera pixel-to-floor calibration and world-frame track assembly.

Each camera is described by two polynomials in the vertical pixel coordinate:
one gives the distance from the camera, the other the lateral meters-per-pixel
scale at that row. A signed axis permutation then places the camera-relative
point into the shared world frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P

from . import formats
from .errors import (
    ConflictingObservations,
    IllConditioned,
    InsufficientPoints,
    InvalidCalibration,
    NonMonotoneFit,
    NonPositiveScale,
    OutOfCalibratedRange,
)
from .ingest import PixelPoint, PixelTrack
from .tracks import INTERPOLATED, OBSERVED, WorldTrack

FEET_TO_M = 0.3048
DEFAULT_DEPTH_DEGREE = 2
DEFAULT_WIDTH_DEGREE = 1
N_VALIDATION_SAMPLES = 100
MAX_CONDITION = 1e10

# (lateral, depth) -> world (dx, dy)
AXIS_MAPPINGS = {
    "+x+y": np.array([[1.0, 0.0], [0.0, 1.0]]),
    "+x-y": np.array([[1.0, 0.0], [0.0, -1.0]]),
    "swap+-": np.array([[0.0, 1.0], [-1.0, 0.0]]),
    "swap-+": np.array([[0.0, -1.0], [1.0, 0.0]]),
}


class CameraPoint(NamedTuple):
    lateral: float
    depth: float


class WorldPoint(NamedTuple):
    x: float
    y: float


def _check_range(v, lo: float, hi: float, what: str) -> None:
    v = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < lo) or np.any(v > hi):
        raise OutOfCalibratedRange(f"{what}: pixel row outside calibrated range [{lo}, {hi}]")


@dataclass(frozen=True, eq=False)
class DepthModel:
    coefficients: np.ndarray  # ascending degree
    valid_pixel_range: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))
        if self.degree < 1:
            raise InvalidCalibration("depth model degree must be >= 1")

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, v):
        _check_range(v, *self.valid_pixel_range, "depth model")
        return P.polyval(v, self.coefficients)


@dataclass(frozen=True, eq=False)
class WidthModel:
    coefficients: np.ndarray
    valid_pixel_range: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, v):
        _check_range(v, *self.valid_pixel_range, "width model")
        return P.polyval(v, self.coefficients)


@dataclass(frozen=True)
class CameraPose:
    camera_id: str
    world_position: tuple[float, float]
    axis_mapping: str = "+x+y"
    principal_pixel_u: float = 320.0
    frame_width: int = 640

    def __post_init__(self):
        if self.axis_mapping not in AXIS_MAPPINGS:
            raise InvalidCalibration(f"unknown axis mapping {self.axis_mapping!r}; expected one of {sorted(AXIS_MAPPINGS)}")
        object.__setattr__(self, "world_position", tuple(float(x) for x in self.world_position))

    @property
    def matrix(self) -> np.ndarray:
        return AXIS_MAPPINGS[self.axis_mapping]


@dataclass(frozen=True)
class CameraModel:
    pose: CameraPose
    depth: DepthModel
    width: WidthModel

    def __post_init__(self):
        lo, hi = self.pixel_range
        if lo > hi:
            raise InvalidCalibration(f"camera {self.pose.camera_id}: depth and width ranges do not overlap")

    @property
    def camera_id(self) -> str:
        return self.pose.camera_id

    @property
    def pixel_range(self) -> tuple[float, float]:
        return (
            max(self.depth.valid_pixel_range[0], self.width.valid_pixel_range[0]),
            min(self.depth.valid_pixel_range[1], self.width.valid_pixel_range[1]),
        )


def _fit_polynomial(v: np.ndarray, y: np.ndarray, degree: int, max_condition: float) -> np.ndarray:
    """Least-squares fit on a centered/scaled abscissa, returned as raw ascending coefficients."""
    n_distinct = len(np.unique(v))
    if n_distinct < degree + 1:
        raise InsufficientPoints(f"degree {degree} fit needs {degree + 1} distinct pixel rows, got {n_distinct}")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        # degree-0 fit of a single row
        return np.array([float(np.mean(y))])
    z = (2.0 * v - (lo + hi)) / (hi - lo)
    vander = np.vander(z, degree + 1, increasing=True)
    cond = np.linalg.cond(vander)
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditioned(f"design matrix condition number {cond:.3g} exceeds {max_condition:.3g}")
    coef_z, *_ = np.linalg.lstsq(vander, y, rcond=None)
    raw = Polynomial(coef_z, domain=[lo, hi], window=[-1, 1]).convert().coef
    out = np.zeros(degree + 1)
    out[: len(raw)] = raw
    return out


def _dense_rows(lo: float, hi: float) -> np.ndarray:
    return np.linspace(lo, hi, N_VALIDATION_SAMPLES)


def fit_depth_model(
    pairs: Sequence[tuple[float, float]],
    degree: int = DEFAULT_DEPTH_DEGREE,
    max_condition: float = MAX_CONDITION,
) -> DepthModel:
    """Fit distance-from-camera as a polynomial of the vertical pixel row."""
    if degree < 1:
        raise InvalidCalibration("depth model degree must be >= 1")
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    v, d = arr[:, 0], arr[:, 1]
    if len(arr) == 0:
        raise InsufficientPoints("no calibration pairs")
    if np.any(d <= 0):
        raise InvalidCalibration("calibration distances must be positive")
    coef = _fit_polynomial(v, d, degree, max_condition)
    lo, hi = float(v.min()), float(v.max())
    slope = np.diff(P.polyval(_dense_rows(lo, hi), coef))
    if not (np.all(slope > 0) or np.all(slope < 0)):
        raise NonMonotoneFit(f"fitted depth model is not strictly monotone over [{lo}, {hi}]")
    return DepthModel(coef, (lo, hi))


def fit_width_model(
    samples: Sequence[tuple[float, float, float]],
    degree: int = DEFAULT_WIDTH_DEGREE,
    max_condition: float = MAX_CONDITION,
) -> WidthModel:
    """Fit the lateral meters-per-pixel scale as a polynomial of the vertical pixel row."""
    arr = np.asarray(samples, dtype=float).reshape(-1, 3)
    if len(arr) == 0:
        raise InsufficientPoints("no width samples")
    v, w_px, w_m = arr.T
    if np.any(w_px <= 0) or np.any(w_m <= 0):
        raise NonPositiveScale("object widths must be positive")
    coef = _fit_polynomial(v, w_m / w_px, degree, max_condition)
    lo, hi = float(v.min()), float(v.max())
    if np.any(P.polyval(_dense_rows(lo, hi), coef) <= 0):
        raise NonPositiveScale(f"fitted width scale is not positive over [{lo}, {hi}]")
    return WidthModel(coef, (lo, hi))


def pixels_to_camera(uv: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Vectorized pixel -> (lateral, depth); raises if any row is out of range."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    lo, hi = cam.pixel_range
    _check_range(uv[:, 1], lo, hi, f"camera {cam.camera_id}")
    depth = cam.depth(uv[:, 1])
    lateral = (uv[:, 0] - cam.pose.principal_pixel_u) * cam.width(uv[:, 1])
    if np.any(depth <= 0):
        raise OutOfCalibratedRange(f"camera {cam.camera_id}: non-positive depth")
    return np.column_stack([lateral, depth])


def pixel_to_camera(p: PixelPoint | tuple[float, float], cam: CameraModel) -> CameraPoint:
    lateral, depth = pixels_to_camera(np.array([p]), cam)[0]
    return CameraPoint(float(lateral), float(depth))


def cameras_to_world(ld: np.ndarray, pose: CameraPose) -> np.ndarray:
    ld = np.asarray(ld, dtype=float).reshape(-1, 2)
    return np.asarray(pose.world_position) + ld @ pose.matrix.T


def world_to_cameras(xy: np.ndarray, pose: CameraPose) -> np.ndarray:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    # signed permutations are orthogonal: the inverse is the transpose
    return (xy - np.asarray(pose.world_position)) @ pose.matrix


def camera_to_world(c: CameraPoint | tuple[float, float], pose: CameraPose) -> WorldPoint:
    x, y = cameras_to_world(np.array([c]), pose)[0]
    return WorldPoint(float(x), float(y))


def world_to_camera(w: WorldPoint | tuple[float, float], pose: CameraPose) -> CameraPoint:
    lat, dep = world_to_cameras(np.array([w]), pose)[0]
    return CameraPoint(float(lat), float(dep))


def pixel_track_to_world(track: PixelTrack, cam: CameraModel) -> WorldTrack:
    """Convert a pixel track; samples outside the calibrated rows are dropped."""
    lo, hi = cam.pixel_range
    keep = (track.uv[:, 1] >= lo) & (track.uv[:, 1] <= hi)
    uv = track.uv[keep]
    xy = cameras_to_world(pixels_to_camera(uv, cam), cam.pose) if len(uv) else np.empty((0, 2))
    source = tuple(s for s, k in zip(track.source, keep) if k)
    return WorldTrack(
        agent=track.agent,
        t=track.frames[keep] / track.fps,
        xy=xy,
        sample_rate_hz=track.fps,
        source=source,
        camera_id=(cam.camera_id,) * len(xy),
    )


def stitch_tracks(segments: Sequence[WorldTrack], max_conflict_m: float = 1.0) -> WorldTrack:
    """Merge per-camera segments into one uniformly sampled track.

    Samples falling on the same sample instant are averaged (observed samples
    take precedence over interpolated ones); instants no camera covers are
    linearly interpolated between their neighbours.
    """
    segments = [s for s in segments if len(s)]
    if not segments:
        raise InsufficientPoints("no track samples to stitch")
    if len(segments) == 1 and segments[0].is_uniform():
        return segments[0]
    rate = segments[0].sample_rate_hz
    agent = segments[0].agent
    t_all = np.concatenate([s.t for s in segments])
    t0 = float(t_all.min())

    groups: dict[int, list[tuple[float, np.ndarray, str, str]]] = {}
    for seg in segments:
        ks = np.rint((seg.t - t0) * rate).astype(np.int64)
        for k, t, xy, src, cam in zip(ks.tolist(), seg.t, seg.xy, seg.source, seg.camera_id):
            groups.setdefault(k, []).append((float(t), xy, src, cam))

    ks = sorted(groups)
    t_out, xy_out, src_out, cam_out = [], [], [], []
    for k in ks:
        members = groups[k]
        observed = [m for m in members if m[2] == OBSERVED]
        use = observed or members
        pts = np.array([m[1] for m in use])
        if len(pts) > 1:
            spread = np.max(np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1)))
            if spread > max_conflict_m:
                raise ConflictingObservations(
                    f"{agent}: cameras disagree by {spread:.3f} m at t={t0 + k / rate:.6f}s (limit {max_conflict_m} m)"
                )
        t_out.append(min(m[0] for m in use) if len(use) == 1 else t0 + k / rate)
        xy_out.append(pts.mean(axis=0))
        src_out.append(use[0][2] if observed else INTERPOLATED)
        cam_out.append("+".join(sorted({m[3] for m in use})))

    k_arr = np.array(ks)
    full = np.arange(k_arr[0], k_arr[-1] + 1)
    if len(full) == len(k_arr):
        return WorldTrack(agent, np.array(t_out), np.array(xy_out), rate, tuple(src_out), tuple(cam_out))

    xy_arr = np.array(xy_out)
    pos = {k: i for i, k in enumerate(ks)}
    t_f, xy_f, src_f, cam_f = [], [], [], []
    x_interp = np.interp(full, k_arr, xy_arr[:, 0])
    y_interp = np.interp(full, k_arr, xy_arr[:, 1])
    for j, k in enumerate(full.tolist()):
        if k in pos:
            i = pos[k]
            t_f.append(t_out[i])
            xy_f.append(xy_out[i])
            src_f.append(src_out[i])
            cam_f.append(cam_out[i])
        else:
            t_f.append(t0 + k / rate)
            xy_f.append((x_interp[j], y_interp[j]))
            src_f.append(INTERPOLATED)
            cam_f.append("")
    return WorldTrack(agent, np.array(t_f), np.array(xy_f), rate, tuple(src_f), tuple(cam_f))


# --- calibration files -------------------------------------------------------


def calibrate_camera(calib: dict) -> tuple[CameraModel, dict]:
    """Fit both models from a calibration document; returns the model and fit diagnostics."""
    unit = calib.get("distance_unit", "m")
    if unit not in ("m", "ft"):
        raise InvalidCalibration(f"unknown distance unit {unit!r}")
    factor = FEET_TO_M if unit == "ft" else 1.0
    degrees = calib.get("degrees", {})
    depth_pairs = np.asarray(calib["depth_pairs"], dtype=float).reshape(-1, 2) * [1.0, factor]
    width_samples = np.asarray(calib["width_samples"], dtype=float).reshape(-1, 3) * [1.0, 1.0, factor]
    depth = fit_depth_model(depth_pairs, degrees.get("depth", DEFAULT_DEPTH_DEGREE))
    width = fit_width_model(width_samples, degrees.get("width", DEFAULT_WIDTH_DEGREE))
    frame_width = int(calib.get("frame_width", 640))
    pose = CameraPose(
        camera_id=str(calib["camera_id"]),
        world_position=tuple(np.asarray(calib["world_position"], dtype=float) * factor),
        axis_mapping=calib["axis_mapping"],
        principal_pixel_u=float(calib.get("principal_pixel_u", frame_width / 2)),
        frame_width=frame_width,
    )
    depth_res = depth(depth_pairs[:, 0]) - depth_pairs[:, 1]
    width_res = width(width_samples[:, 0]) - width_samples[:, 2] / width_samples[:, 1]
    diagnostics = {
        "camera_id": pose.camera_id,
        "depth_rms_residual_m": float(np.sqrt(np.mean(depth_res**2))),
        "depth_max_abs_residual_m": float(np.max(np.abs(depth_res))),
        "width_rms_residual_m_per_px": float(np.sqrt(np.mean(width_res**2))),
        "n_depth_pairs": int(len(depth_pairs)),
        "n_width_samples": int(len(width_samples)),
    }
    return CameraModel(pose, depth, width), diagnostics


def load_calibration(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    formats.check_json_tag(doc, formats.CALIBRATION)
    return doc


def calibration_document(
    camera_id: str,
    world_position: tuple[float, float],
    axis_mapping: str,
    depth_pairs,
    width_samples,
    principal_pixel_u: float = 320.0,
    frame_width: int = 640,
    degrees: dict | None = None,
) -> dict:
    return {
        **formats.json_tag(formats.CALIBRATION),
        "camera_id": camera_id,
        "world_position": [float(x) for x in world_position],
        "axis_mapping": axis_mapping,
        "principal_pixel_u": float(principal_pixel_u),
        "frame_width": int(frame_width),
        "distance_unit": "m",
        "depth_pairs": [[float(a), float(b)] for a, b in depth_pairs],
        "width_samples": [[float(a), float(b), float(c)] for a, b, c in width_samples],
        "degrees": degrees or {"depth": DEFAULT_DEPTH_DEGREE, "width": DEFAULT_WIDTH_DEGREE},
    }


def camera_to_dict(cam: CameraModel) -> dict:
    return {
        **formats.json_tag(formats.CAMERA),
        "camera_id": cam.pose.camera_id,
        "world_position": list(cam.pose.world_position),
        "axis_mapping": cam.pose.axis_mapping,
        "principal_pixel_u": cam.pose.principal_pixel_u,
        "frame_width": cam.pose.frame_width,
        "depth": {"coefficients": cam.depth.coefficients.tolist(), "valid_pixel_range": list(cam.depth.valid_pixel_range)},
        "width": {"coefficients": cam.width.coefficients.tolist(), "valid_pixel_range": list(cam.width.valid_pixel_range)},
    }


def camera_from_dict(doc: dict) -> CameraModel:
    formats.check_json_tag(doc, formats.CAMERA)
    pose = CameraPose(
        doc["camera_id"], tuple(doc["world_position"]), doc["axis_mapping"], doc["principal_pixel_u"], doc["frame_width"]
    )
    depth = DepthModel(np.array(doc["depth"]["coefficients"]), tuple(doc["depth"]["valid_pixel_range"]))
    width = WidthModel(np.array(doc["width"]["coefficients"]), tuple(doc["width"]["valid_pixel_range"]))
    return CameraModel(pose, depth, width)


def save_camera(cam: CameraModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2) + "\n")


def load_camera(path: str | Path) -> CameraModel:
    return camera_from_dict(json.loads(Path(path).read_text()))
