"""World-frame tracks, the common currency between pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .errors import CorruptModel

AGENTS = ("subject", "robot")
OBSERVED = "observed"
INTERPOLATED = "interpolated"


@dataclass(frozen=True, eq=False)
class WorldTrack:
    """Time-stamped floor-plane positions (meters) of one agent.

    ``source`` and ``camera_id`` are per-sample labels; ``xy`` has shape (N, 2).
    """

    agent: str
    t: np.ndarray
    xy: np.ndarray
    sample_rate_hz: float
    source: tuple[str, ...] = field(default=())
    camera_id: tuple[str, ...] = field(default=())

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        n = len(t)
        source = tuple(self.source) if self.source else (OBSERVED,) * n
        camera_id = tuple(self.camera_id) if self.camera_id else ("",) * n
        if self.agent not in AGENTS:
            raise ValueError(f"agent must be one of {AGENTS}, got {self.agent!r}")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if len(xy) != n or len(source) != n or len(camera_id) != n:
            raise ValueError("track columns have different lengths")
        if n > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "camera_id", camera_id)

    def __len__(self) -> int:
        return len(self.t)

    def is_uniform(self, tol: float = 1e-9) -> bool:
        if len(self.t) < 2:
            return True
        return bool(np.all(np.abs(np.diff(self.t) - 1.0 / self.sample_rate_hz) <= tol))

    def with_xy(self, xy: np.ndarray) -> "WorldTrack":
        return WorldTrack(self.agent, self.t, xy, self.sample_rate_hz, self.source, self.camera_id)

    def bounding_box_diagonal(self) -> float:
        span = self.xy.max(axis=0) - self.xy.min(axis=0)
        return float(np.hypot(*span))


def write_track_csv(track: WorldTrack, path: str | Path) -> None:
    lines = [formats.csv_tag(formats.TRACK, agent=track.agent, rate_hz=repr(float(track.sample_rate_hz)))]
    lines.append("t_s,x_m,y_m,source,camera_id\n")
    for t, (x, y), src, cam in zip(track.t, track.xy, track.source, track.camera_id):
        lines.append(f"{t:.6f},{x:.6f},{y:.6f},{src},{cam}\n")
    Path(path).write_text("".join(lines))


def read_track_csv(path: str | Path) -> WorldTrack:
    text = Path(path).read_text().splitlines()
    if len(text) < 2:
        raise CorruptModel(f"{path}: truncated track file")
    attrs = formats.parse_csv_tag(text[0], formats.TRACK)
    if text[1].strip() != "t_s,x_m,y_m,source,camera_id":
        raise CorruptModel(f"{path}: unexpected track header {text[1]!r}")
    t, xy, source, cams = [], [], [], []
    for line in text[2:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise CorruptModel(f"{path}: bad track row {line!r}")
        t.append(float(parts[0]))
        xy.append((float(parts[1]), float(parts[2])))
        source.append(parts[3])
        cams.append(parts[4])
    return WorldTrack(
        agent=attrs.get("agent", "subject"),
        t=np.array(t),
        xy=np.array(xy).reshape(-1, 2),
        sample_rate_hz=float(attrs["rate_hz"]),
        source=tuple(source),
        camera_id=tuple(cams),
    )
