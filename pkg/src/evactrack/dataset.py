"""Lag-feature supervised datasets and min-max scaling.

Each row pairs the subject's and robot's positions ``m`` samples in the past
(plus, optionally, their separation) with the subject's current position as
the target. Scaling uses shared per-axis bounds so that x-like columns
(subject x, robot x, target x) all go through the same affine map and a
predicted position inverts back to meters exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import formats
from .errors import (
    CorruptModel,
    DimensionMismatch,
    EmptyInput,
    MisalignedTracks,
    TrackShorterThanLag,
)
from .tracks import WorldTrack

SCALE_EPS = 1e-12
RANGE_TOL = 1e-9


@dataclass(frozen=True)
class LagConfig:
    lag_frames: int = 10
    include_relative_distance: bool = True
    sample_rate_hz: float = 40.0

    def __post_init__(self):
        if self.lag_frames < 1:
            raise ValueError("lag_frames must be >= 1")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def lag_seconds(self) -> float:
        return self.lag_frames / self.sample_rate_hz

    def feature_names(self) -> tuple[str, ...]:
        m = self.lag_frames
        names = [f"xs_l{m}", f"ys_l{m}", f"xr_l{m}", f"yr_l{m}"]
        if self.include_relative_distance:
            names.append(f"rel_l{m}")
        return tuple(names)


class FeatureRow(NamedTuple):
    subject_id: str
    t_K: float
    xs_lag: float
    ys_lag: float
    xr_lag: float
    yr_lag: float
    rel_dist_lag: float | None
    target_x: float
    target_y: float


def channel_of(column: str) -> str:
    """Scaling channel shared by a column: ``x``, ``y`` or ``rel``."""
    if column.startswith(("xs_", "xr_")) or column == "target_x":
        return "x"
    if column.startswith(("ys_", "yr_")) or column == "target_y":
        return "y"
    if column.startswith("rel_"):
        return "rel"
    raise DimensionMismatch(f"column {column!r} has no scaling channel")


@dataclass(frozen=True, eq=False)
class MinMaxScaler:
    """Per-channel affine map sending the fitted minimum to 0 and maximum to 1.

    Channels whose range is below ``eps`` use ``eps`` as their span, so a
    constant channel maps to 0.
    """

    names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    eps: float = SCALE_EPS

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=float).reshape(-1)
        maxs = np.asarray(self.maxs, dtype=float).reshape(-1)
        if not (len(self.names) == len(mins) == len(maxs)):
            raise DimensionMismatch("scaler names and bounds differ in length")
        if np.any(maxs < mins):
            raise ValueError("scaler max below min")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @classmethod
    def fit(cls, columns: Mapping[str, Sequence[float]], eps: float = SCALE_EPS) -> "MinMaxScaler":
        names, mins, maxs = [], [], []
        for name, values in columns.items():
            v = np.asarray(values, dtype=float).reshape(-1)
            if len(v) == 0:
                raise EmptyInput(f"no values for scaler channel {name!r}")
            names.append(name)
            mins.append(v.min())
            maxs.append(v.max())
        if not names:
            raise EmptyInput("scaler needs at least one channel")
        return cls(tuple(names), np.array(mins), np.array(maxs), eps)

    def _index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DimensionMismatch(f"scaler has no channel {name!r} (has {self.names})") from None

    def span(self, name: str) -> float:
        i = self._index(name)
        return max(self.maxs[i] - self.mins[i], self.eps)

    def scale(self, name: str, values):
        i = self._index(name)
        return (np.asarray(values, dtype=float) - self.mins[i]) / self.span(name)

    def inverse(self, name: str, values):
        i = self._index(name)
        return np.asarray(values, dtype=float) * self.span(name) + self.mins[i]

    def to_dict(self) -> dict:
        return {
            **formats.json_tag(formats.SCALER),
            "eps": self.eps,
            "channels": [
                {"name": n, "min": float(lo), "max": float(hi)} for n, lo, hi in zip(self.names, self.mins, self.maxs)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MinMaxScaler":
        formats.check_json_tag(doc, formats.SCALER)
        ch = doc["channels"]
        return cls(tuple(c["name"] for c in ch), [c["min"] for c in ch], [c["max"] for c in ch], doc.get("eps", SCALE_EPS))


@dataclass(frozen=True, eq=False)
class SupervisedDataset:
    """Column-oriented collection of lagged rows.

    ``features`` is (n, d) with columns ``feature_names``; ``targets`` is (n, 2).
    ``scaler`` is None while values are still in meters.
    """

    subject_id: tuple[str, ...]
    t_target: np.ndarray
    t_feature: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    lag_config: LagConfig
    scaler: MinMaxScaler | None = None
    environment_id: str = ""
    out_of_range: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.t_target)
        object.__setattr__(self, "subject_id", tuple(self.subject_id))
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float).reshape(n, len(self.lag_config.feature_names())))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float).reshape(n, 2))
        if self.out_of_range is None:
            object.__setattr__(self, "out_of_range", np.zeros(n, dtype=bool))
        if self.features.shape[1] != len(self.feature_names):
            raise DimensionMismatch("feature matrix width does not match lag configuration")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.lag_config.feature_names()

    def __len__(self) -> int:
        return len(self.t_target)

    def row(self, i: int) -> FeatureRow:
        f = self.features[i]
        rel = float(f[4]) if self.lag_config.include_relative_distance else None
        return FeatureRow(self.subject_id[i], float(self.t_target[i]), *map(float, f[:4]), rel, *map(float, self.targets[i]))

    def subjects(self) -> list[str]:
        return list(dict.fromkeys(self.subject_id))

    def select(self, mask: np.ndarray) -> "SupervisedDataset":
        idx = np.flatnonzero(mask)
        return replace(
            self,
            subject_id=tuple(self.subject_id[i] for i in idx),
            t_target=self.t_target[idx],
            t_feature=self.t_feature[idx],
            features=self.features[idx],
            targets=self.targets[idx],
            out_of_range=self.out_of_range[idx],
        )

    def for_subjects(self, ids) -> "SupervisedDataset":
        ids = set(ids)
        return self.select(np.array([s in ids for s in self.subject_id], dtype=bool))


def build_lagged_rows(
    subject: WorldTrack,
    robot: WorldTrack,
    cfg: LagConfig = LagConfig(),
    subject_id: str = "",
    environment_id: str = "",
) -> SupervisedDataset:
    """One row per index k >= m: features from index k - m, target = subject at k."""
    if len(subject) != len(robot):
        raise MisalignedTracks(f"subject has {len(subject)} samples, robot has {len(robot)}")
    if subject.sample_rate_hz != robot.sample_rate_hz or abs(subject.sample_rate_hz - cfg.sample_rate_hz) > 1e-9:
        raise MisalignedTracks(
            f"sample rates differ: subject {subject.sample_rate_hz}, robot {robot.sample_rate_hz}, lag config {cfg.sample_rate_hz}"
        )
    if len(subject) and np.max(np.abs(subject.t - robot.t)) > 1e-9:
        raise MisalignedTracks("subject and robot timestamps differ")
    m, n = cfg.lag_frames, len(subject)
    if n <= m:
        raise TrackShorterThanLag(f"track of {n} samples cannot supply lag {m}")
    s_lag, r_lag = subject.xy[: n - m], robot.xy[: n - m]
    cols = [s_lag[:, 0], s_lag[:, 1], r_lag[:, 0], r_lag[:, 1]]
    if cfg.include_relative_distance:
        cols.append(np.hypot(*(s_lag - r_lag).T))
    return SupervisedDataset(
        subject_id=(subject_id,) * (n - m),
        t_target=subject.t[m:].copy(),
        t_feature=subject.t[: n - m].copy(),
        features=np.column_stack(cols),
        targets=subject.xy[m:].copy(),
        lag_config=cfg,
        environment_id=environment_id,
    )


def concat_datasets(parts: Sequence[SupervisedDataset]) -> SupervisedDataset:
    if not parts:
        raise EmptyInput("no datasets to concatenate")
    cfg = parts[0].lag_config
    if any(p.lag_config != cfg for p in parts):
        raise DimensionMismatch("datasets built with different lag configurations")
    scalers = {id(p.scaler) for p in parts}
    if len(scalers) > 1:
        raise DimensionMismatch("datasets scaled with different scalers")
    return SupervisedDataset(
        subject_id=sum((p.subject_id for p in parts), ()),
        t_target=np.concatenate([p.t_target for p in parts]),
        t_feature=np.concatenate([p.t_feature for p in parts]),
        features=np.concatenate([p.features for p in parts]),
        targets=np.concatenate([p.targets for p in parts]),
        lag_config=cfg,
        scaler=parts[0].scaler,
        environment_id=parts[0].environment_id,
        out_of_range=np.concatenate([p.out_of_range for p in parts]),
    )


def fit_minmax_scaler(rows: SupervisedDataset) -> MinMaxScaler:
    """Fit x/y (and rel) channel bounds from unscaled training rows."""
    if rows.scaler is not None:
        raise ValueError("fit_minmax_scaler expects unscaled rows")
    if len(rows) == 0:
        raise EmptyInput("cannot fit a scaler on zero rows")
    columns: dict[str, list[np.ndarray]] = {}
    for j, name in enumerate(rows.feature_names):
        columns.setdefault(channel_of(name), []).append(rows.features[:, j])
    columns["x"].append(rows.targets[:, 0])
    columns["y"].append(rows.targets[:, 1])
    return MinMaxScaler.fit({k: np.concatenate(v) for k, v in columns.items()})


def apply_scaler(rows: SupervisedDataset, scaler: MinMaxScaler) -> SupervisedDataset:
    """Scale features and targets; rows with any value outside [0, 1] are flagged."""
    if rows.scaler is not None:
        raise ValueError("rows are already scaled")
    feats = np.column_stack(
        [scaler.scale(channel_of(name), rows.features[:, j]) for j, name in enumerate(rows.feature_names)]
    ).reshape(len(rows), -1)
    targets = np.column_stack([scaler.scale("x", rows.targets[:, 0]), scaler.scale("y", rows.targets[:, 1])])
    both = np.hstack([feats, targets])
    flags = np.any((both < -RANGE_TOL) | (both > 1 + RANGE_TOL), axis=1) if len(rows) else np.zeros(0, bool)
    return replace(rows, features=feats, targets=targets, scaler=scaler, out_of_range=flags)


def invert_scaler(points, scaler: MinMaxScaler) -> np.ndarray:
    """Map scaled (x, y) points back to meters."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != 2:
        raise DimensionMismatch(f"expected (..., 2) points, got shape {pts.shape}")
    return np.stack([scaler.inverse("x", pts[..., 0]), scaler.inverse("y", pts[..., 1])], axis=-1)


def scale_points(points, scaler: MinMaxScaler) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return np.stack([scaler.scale("x", pts[..., 0]), scaler.scale("y", pts[..., 1])], axis=-1)


def assert_no_leakage(rows: SupervisedDataset) -> None:
    """Every feature timestamp must precede its target timestamp."""
    bad = np.flatnonzero(~(rows.t_feature < rows.t_target))
    if len(bad):
        raise AssertionError(f"{len(bad)} rows use features at or after their target time (first row {bad[0]})")


# --- files -------------------------------------------------------------------


def write_dataset_csv(rows: SupervisedDataset, path: str | Path) -> None:
    cfg = rows.lag_config
    tag = formats.csv_tag(
        formats.DATASET,
        lag=cfg.lag_frames,
        rate_hz=repr(float(cfg.sample_rate_hz)),
        rel=int(cfg.include_relative_distance),
        scaled=int(rows.scaler is not None),
        env=rows.environment_id or "-",
    )
    header = ",".join(["subject_id", "t_s", *rows.feature_names, "target_x", "target_y"])
    lines = [tag, header + "\n"]
    for i in range(len(rows)):
        vals = ",".join(f"{v:.6f}" for v in (*rows.features[i], *rows.targets[i]))
        lines.append(f"{rows.subject_id[i]},{rows.t_target[i]:.6f},{vals}\n")
    Path(path).write_text("".join(lines))


def read_dataset_csv(path: str | Path, scaler: MinMaxScaler | None = None) -> SupervisedDataset:
    """Read a dataset file; pass the companion scaler when the file holds scaled values."""
    text = Path(path).read_text().splitlines()
    if len(text) < 2:
        raise CorruptModel(f"{path}: truncated dataset file")
    attrs = formats.parse_csv_tag(text[0], formats.DATASET)
    cfg = LagConfig(int(attrs["lag"]), bool(int(attrs["rel"])), float(attrs["rate_hz"]))
    expected = ",".join(["subject_id", "t_s", *cfg.feature_names(), "target_x", "target_y"])
    if text[1].strip() != expected:
        raise CorruptModel(f"{path}: header {text[1]!r} does not match {expected!r}")
    scaled = bool(int(attrs["scaled"]))
    if scaled and scaler is None:
        raise ValueError(f"{path} holds scaled values; its scaler is required")
    d = len(cfg.feature_names())
    sid, t, vals = [], [], []
    for line in text[2:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != d + 4:
            raise CorruptModel(f"{path}: bad dataset row {line!r}")
        sid.append(parts[0])
        t.append(float(parts[1]))
        vals.append([float(x) for x in parts[2:]])
    arr = np.array(vals, dtype=float).reshape(-1, d + 2)
    t = np.array(t)
    env = attrs.get("env", "-")
    return SupervisedDataset(
        subject_id=tuple(sid),
        t_target=t,
        t_feature=t - cfg.lag_seconds,
        features=arr[:, :d],
        targets=arr[:, d:],
        lag_config=cfg,
        scaler=scaler if scaled else None,
        environment_id="" if env == "-" else env,
    )


def save_scaler(scaler: MinMaxScaler, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scaler.to_dict(), indent=2) + "\n")


def load_scaler(path: str | Path) -> MinMaxScaler:
    return MinMaxScaler.from_dict(json.loads(Path(path).read_text()))
