"""Leave-one-subject-out evaluation and error reporting in meters."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import formats
from .dataset import (
    LagConfig,
    MinMaxScaler,
    SupervisedDataset,
    apply_scaler,
    build_lagged_rows,
    concat_datasets,
    fit_minmax_scaler,
    invert_scaler,
)
from .errors import EmptyInput, LengthMismatch, TooFewSubjects
from .gbt import GbtHyperparams, GbtModel, predict, train
from .tracks import WorldTrack

log = logging.getLogger(__name__)

REPORT_HEADER = "holdout_id,mu_e_m,sigma_e_m,n"
QUANTILE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ErrorStats:
    holdout_id: str
    mu_e: float
    sigma_e: float
    n_samples: int


@dataclass(frozen=True)
class AggregateRow:
    mu_e: float
    sigma_e: float


@dataclass
class FoldResult:
    stats: ErrorStats
    errors: np.ndarray
    predicted: WorldTrack
    truth: WorldTrack
    training_ids: tuple[str, ...]


@dataclass
class FoldReport:
    stats: list[ErrorStats]
    aggregate: AggregateRow
    metadata: dict = field(default_factory=dict)
    folds: list[FoldResult] = field(default_factory=list)


def l2_errors(predicted, truth, holdout_id: str = "") -> ErrorStats:
    """Mean and population standard deviation of per-sample Euclidean errors."""
    p = np.asarray(predicted, dtype=float).reshape(-1, 2)
    t = np.asarray(truth, dtype=float).reshape(-1, 2)
    if len(p) != len(t):
        raise LengthMismatch(f"{len(p)} predictions vs {len(t)} truth points")
    if len(p) == 0:
        raise EmptyInput("no points to compare")
    d = np.hypot(*(p - t).T)
    return ErrorStats(holdout_id, float(d.mean()), float(d.std()), len(d))


def aggregate_report(stats: Sequence[ErrorStats]) -> AggregateRow:
    """Unweighted means of the per-holdout mu_e and sigma_e."""
    if not stats:
        raise EmptyInput("no holdout statistics to aggregate")
    return AggregateRow(math.fsum(s.mu_e for s in stats) / len(stats), math.fsum(s.sigma_e for s in stats) / len(stats))


def report_value(x: float, decimals: int = 3) -> str:
    """Format a reported value by truncation to ``decimals`` places.

    Reference mean rows are truncated, not rounded to nearest (0.0996 is
    shown as 0.099), and reports follow the same convention.
    """
    scale = 10**decimals
    # guard against representation error like 2.2499999999999996
    q = math.floor(round(x * scale, 6)) if x >= 0 else -math.floor(round(-x * scale, 6))
    return f"{q / scale:.{decimals}f}"


def predict_track(
    model: GbtModel | Callable[[np.ndarray], np.ndarray],
    subject: WorldTrack,
    robot: WorldTrack,
    lag: LagConfig,
    scaler: MinMaxScaler,
) -> WorldTrack:
    """One-step predictions at every k >= m, inverse-scaled to meters.

    ``model`` may also be any callable mapping scaled features to scaled (x, y).
    """
    rows = apply_scaler(build_lagged_rows(subject, robot, lag), scaler)
    pred = predict(model, rows.features) if isinstance(model, GbtModel) else np.asarray(model(rows.features))
    xy = invert_scaler(pred, scaler)
    m = lag.lag_frames
    return WorldTrack("subject", subject.t[m:], xy, subject.sample_rate_hz, (), ("predicted",) * len(xy))


def _rows_by_subject(tracks: Mapping[str, tuple[WorldTrack, WorldTrack]], lag: LagConfig) -> dict[str, SupervisedDataset]:
    return {sid: build_lagged_rows(s, r, lag, subject_id=sid) for sid, (s, r) in tracks.items()}


def leave_one_subject_out(
    tracks: Mapping[str, tuple[WorldTrack, WorldTrack]],
    lag: LagConfig = LagConfig(),
    hp: GbtHyperparams = GbtHyperparams(),
    exclusions: Iterable[str] = (),
    metadata: dict | None = None,
) -> FoldReport:
    """Train one model per usable subject on all the others and score the holdout.

    ``tracks`` maps subject id -> (subject track, robot track). The scaler is
    refit on each fold's training rows only.
    """
    excluded = set(exclusions)
    usable = [sid for sid in tracks if sid not in excluded]
    if len(usable) < 2:
        raise TooFewSubjects(f"need at least 2 usable subjects, got {len(usable)}")
    rows = _rows_by_subject({sid: tracks[sid] for sid in usable}, lag)

    stats, folds = [], []
    for holdout in usable:
        train_ids = tuple(sid for sid in usable if sid != holdout)
        raw_train = concat_datasets([rows[sid] for sid in train_ids])
        scaler = fit_minmax_scaler(raw_train)
        model = train(apply_scaler(raw_train, scaler), hp)
        subject, robot = tracks[holdout]
        predicted = predict_track(model, subject, robot, lag, scaler)
        truth_xy = subject.xy[lag.lag_frames :]
        st = l2_errors(predicted.xy, truth_xy, holdout)
        log.info("holdout %s: mu_e=%.4f sigma_e=%.4f n=%d", holdout, st.mu_e, st.sigma_e, st.n_samples)
        stats.append(st)
        truth = WorldTrack("subject", subject.t[lag.lag_frames :], truth_xy, subject.sample_rate_hz)
        folds.append(FoldResult(st, np.hypot(*(predicted.xy - truth_xy).T), predicted, truth, train_ids))

    meta = dict(metadata or {})
    meta.update(
        {
            "protocol": "leave-one-subject-out",
            "lag": asdict(lag),
            "hyperparams": asdict(hp),
            "excluded_subjects": sorted(excluded),
            "holdout_subjects": usable,
            "scaler_policy": "refit per fold on training rows",
            "sigma": "population standard deviation",
        }
    )
    return FoldReport(stats, aggregate_report(stats), meta, folds)


def transfer_evaluate(
    train_tracks: Mapping[str, tuple[WorldTrack, WorldTrack]],
    test_tracks: Mapping[str, tuple[WorldTrack, WorldTrack]],
    train_lag: LagConfig,
    test_lag: LagConfig,
    hp: GbtHyperparams = GbtHyperparams(),
    metadata: dict | None = None,
) -> FoldReport:
    """Train on one environment, predict another with its own scaler.

    The test environment's scaler is fit on all of its rows, which absorbs the
    unit and scale difference between environments.
    """
    if test_lag.include_relative_distance != train_lag.include_relative_distance:
        raise ValueError("train and test lag configurations must agree on the relative-distance feature")
    raw_train = concat_datasets(list(_rows_by_subject(train_tracks, train_lag).values()))
    train_scaler = fit_minmax_scaler(raw_train)
    model = train(apply_scaler(raw_train, train_scaler), hp)
    test_rows = _rows_by_subject(test_tracks, test_lag)
    test_scaler = fit_minmax_scaler(concat_datasets(list(test_rows.values())))

    stats, folds = [], []
    for sid, (subject, robot) in test_tracks.items():
        predicted = predict_track(model, subject, robot, test_lag, test_scaler)
        truth_xy = subject.xy[test_lag.lag_frames :]
        st = l2_errors(predicted.xy, truth_xy, sid)
        log.info("transfer %s: mu_e=%.4f sigma_e=%.4f n=%d", sid, st.mu_e, st.sigma_e, st.n_samples)
        stats.append(st)
        truth = WorldTrack("subject", subject.t[test_lag.lag_frames :], truth_xy, subject.sample_rate_hz)
        folds.append(FoldResult(st, np.hypot(*(predicted.xy - truth_xy).T), predicted, truth, tuple(train_tracks)))

    meta = dict(metadata or {})
    meta.update(
        {
            "protocol": "cross-environment transfer",
            "train_lag": asdict(train_lag),
            "test_lag": asdict(test_lag),
            "hyperparams": asdict(hp),
            "train_subjects": list(train_tracks),
            "test_runs": list(test_tracks),
            "scaler_policy": "per environment: train scaler on training rows, test scaler on test rows",
            "sigma": "population standard deviation",
        }
    )
    return FoldReport(stats, aggregate_report(stats), meta, folds)


# --- files -------------------------------------------------------------------


def format_report(report: FoldReport) -> str:
    lines = [formats.csv_tag(formats.REPORT, units="m"), REPORT_HEADER + "\n"]
    for s in report.stats:
        lines.append(f"{s.holdout_id},{report_value(s.mu_e)},{report_value(s.sigma_e)},{s.n_samples}\n")
    n_total = sum(s.n_samples for s in report.stats)
    lines.append(f"mean,{report_value(report.aggregate.mu_e)},{report_value(report.aggregate.sigma_e)},{n_total}\n")
    return "".join(lines)


def write_report(report: FoldReport, path: str | Path) -> None:
    Path(path).write_text(format_report(report))


def read_report(path: str | Path) -> list[tuple[str, float, float, int]]:
    text = Path(path).read_text().splitlines()
    formats.parse_csv_tag(text[0], formats.REPORT)
    if text[1].strip() != REPORT_HEADER:
        raise ValueError(f"{path}: unexpected report header")
    out = []
    for line in text[2:]:
        if line.strip():
            hid, mu, sd, n = line.split(",")
            out.append((hid, float(mu), float(sd), int(n)))
    return out


def write_metadata(meta: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps({**formats.json_tag(formats.METADATA), **meta}, indent=2, sort_keys=True) + "\n")


def write_error_quantiles(report: FoldReport, path: str | Path) -> None:
    """Per-fold error quantiles (min, quartiles, max) for box plots."""
    cols = ",".join(f"q{int(q * 100)}" for q in QUANTILE_LEVELS)
    lines = [formats.csv_tag(formats.QUANTILES, units="m"), f"holdout_id,{cols}\n"]
    for fold in report.folds:
        qs = np.quantile(fold.errors, QUANTILE_LEVELS)
        lines.append(f"{fold.stats.holdout_id}," + ",".join(f"{q:.6f}" for q in qs) + "\n")
    Path(path).write_text("".join(lines))
