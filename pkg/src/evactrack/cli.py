"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``.

Failures exit with status 2 and print ``{"error": <category>, "message": ...}``
on stderr. Log level comes from ``EVACTRACK_LOG`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, formats
from .dataset import (
    LagConfig,
    apply_scaler,
    build_lagged_rows,
    concat_datasets,
    fit_minmax_scaler,
    load_scaler,
    read_dataset_csv,
    save_scaler,
    write_dataset_csv,
)
from .errors import EvacTrackError
from .evaluation import (
    leave_one_subject_out,
    predict_track,
    transfer_evaluate,
    write_error_quantiles,
    write_metadata,
    write_report,
)
from .filter import SgConfig, smooth_track
from .gbt import GbtHyperparams, load_model, save_model, train
from .geometry import calibrate_camera, load_calibration, load_camera, save_camera, stitch_tracks
from .ingest import format_robot_detections, parse_pose_frames, parse_robot_detections, serialize_pose_frames
from .pipeline import (
    IngestConfig,
    align_tracks,
    camera_cohort_tracks,
    physical_cohort,
    reconstruct_tracks,
    sim_cohort,
    subject_ids,
    world_cohort_tracks,
)
from .simgen import PRESETS, CameraObservations, export_calibration, load_config, make_cohort, preset, save_config
from .tracks import read_track_csv, write_track_csv

log = logging.getLogger("evactrack")

# (rate, lag frames) per environment preset
ENV_LAG = {"physical-40hz": (40.0, 10), "sim-1hz": (1.0, 1)}
ENV_ALIASES = {"physical": "physical-40hz", "sim": "sim-1hz"}


def _env(name: str) -> str:
    name = ENV_ALIASES.get(name, name)
    if name not in PRESETS:
        raise argparse.ArgumentTypeError(f"unknown environment {name!r}; choose from {PRESETS}")
    return name


def _sg(args) -> SgConfig | None:
    if getattr(args, "no_smooth", False):
        return None
    return SgConfig(args.window, args.order)


def _hp(args) -> GbtHyperparams:
    return GbtHyperparams(
        rounds=args.rounds,
        max_depth=args.depth,
        learning_rate=args.eta,
        reg_lambda=args.reg_lambda,
        gamma=args.gamma,
        min_child_weight=args.min_child_weight,
    )


def _lag(args, rate: float) -> LagConfig:
    return LagConfig(args.lag, not args.no_rel, rate)


def _run_meta(command: str, args, **extra) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in params.items()}
    return {
        "command": command,
        "package_version": __version__,
        "format_version": formats.FORMAT_VERSION,
        "parameters": params,
        **extra,
    }


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input not found: {p}")
    return p


def _read_pairs(tracks_dir: Path) -> dict:
    """Subject id -> (subject, robot) from ``<dir>/<id>/subject.csv`` and ``robot.csv``."""
    pairs = {}
    for sub in sorted(p for p in _require(tracks_dir).iterdir() if p.is_dir()):
        s, r = sub / "subject.csv", sub / "robot.csv"
        if s.exists() and r.exists():
            pairs[sub.name] = align_tracks(read_track_csv(s), read_track_csv(r))
    if not pairs:
        raise FileNotFoundError(f"no <id>/subject.csv + robot.csv pairs under {tracks_dir}")
    return pairs


def _write_pairs(pairs: dict, out: Path) -> None:
    for sid, (s, r) in pairs.items():
        d = _out_dir(out / sid)
        write_track_csv(s, d / "subject.csv")
        write_track_csv(r, d / "robot.csv")


# --- commands ----------------------------------------------------------------


def cmd_simulate(args) -> None:
    out = _out_dir(args.out)
    base = load_config(args.config) if args.config else preset(args.preset, args.seed)
    scenarios = make_cohort(base, args.subjects, args.jitter)
    save_config(base, out / "scenario.json")
    if base.cameras:
        cal_dir = _out_dir(out / "calibration")
        for cam in base.cameras:
            (cal_dir / f"{cam.camera_id}.json").write_text(json.dumps(export_calibration(cam), indent=2) + "\n")
    for sid, sc in zip(subject_ids(len(scenarios)), scenarios):
        d = _out_dir(out / "subjects" / sid)
        save_config(sc.config, d / "config.json")
        write_track_csv(sc.subject_truth, d / "truth_subject.csv")
        write_track_csv(sc.robot_truth, d / "truth_robot.csv")
        if sc.cameras:
            for cid, obs in sc.cameras.items():
                (d / f"{cid}_keypoints.jsonl").write_text("".join(line + "\n" for line in serialize_pose_frames(obs.pose_frames)))
                (d / f"{cid}_detections.csv").write_text(format_robot_detections(obs.detections))
        else:
            write_track_csv(sc.subject_observed, d / "subject.csv")
            write_track_csv(sc.robot_observed, d / "robot.csv")
    write_metadata(_run_meta("simulate", args, n_subjects=len(scenarios)), out / "metadata.json")
    print(out)


def cmd_calibrate(args) -> None:
    out = _out_dir(args.out)
    rows = [formats.csv_tag("evactrack.calibration-report"), "camera_id,depth_rms_m,depth_max_abs_m,width_rms_m_per_px,n_depth,n_width\n"]
    for path in args.calibrations:
        doc = load_calibration(_require(path))
        try:
            cam, diag = calibrate_camera(doc)
        except EvacTrackError as exc:
            raise type(exc)(f"camera {doc.get('camera_id')!r}: {exc}") from None
        save_camera(cam, out / f"{cam.camera_id}.camera.json")
        rows.append(
            f"{cam.camera_id},{diag['depth_rms_residual_m']:.6e},{diag['depth_max_abs_residual_m']:.6e},"
            f"{diag['width_rms_residual_m_per_px']:.6e},{diag['n_depth_pairs']},{diag['n_width_samples']}\n"
        )
    (out / "calibration_report.csv").write_text("".join(rows))
    write_metadata(_run_meta("calibrate", args), out / "metadata.json")
    print(out)


def _load_observations(obs_dir: Path, camera_ids) -> dict:
    obs = {}
    for cid in camera_ids:
        kp, det = obs_dir / f"{cid}_keypoints.jsonl", obs_dir / f"{cid}_detections.csv"
        if not kp.exists() and not det.exists():
            continue
        frames = parse_pose_frames(kp.read_text().splitlines()) if kp.exists() else []
        dets = parse_robot_detections(det.read_text().splitlines()) if det.exists() else []
        obs[cid] = CameraObservations(frames, dets)
    return obs


def cmd_ingest(args) -> None:
    cams = [load_camera(_require(p)) for p in args.cameras]
    obs = _load_observations(_require(args.observations), [c.camera_id for c in cams])
    cfg = IngestConfig(args.confidence, args.min_detection_confidence, args.max_conflict)
    subject, robot = reconstruct_tracks(cams, obs, args.fps, None, cfg)
    out = _out_dir(args.out)
    write_track_csv(subject, out / "subject.csv")
    write_track_csv(robot, out / "robot.csv")
    write_metadata(_run_meta("ingest", args), out / "metadata.json")
    print(out)


def cmd_smooth(args) -> None:
    track = read_track_csv(_require(args.track))
    smoothed = smooth_track(track, SgConfig(args.window, args.order))
    write_track_csv(smoothed, args.out)
    write_metadata(_run_meta("smooth", args), Path(str(args.out) + ".meta.json"))
    print(args.out)


def cmd_dataset(args) -> None:
    pairs = _read_pairs(Path(args.tracks))
    rate = next(iter(pairs.values()))[0].sample_rate_hz
    lag = _lag(args, rate)
    raw = concat_datasets([build_lagged_rows(s, r, lag, sid, args.env) for sid, (s, r) in pairs.items()])
    scaler = fit_minmax_scaler(raw)
    out = _out_dir(args.out)
    write_dataset_csv(apply_scaler(raw, scaler), out / "dataset.csv")
    save_scaler(scaler, out / "scaler.json")
    write_metadata(_run_meta("dataset", args, lag=asdict(lag), n_rows=len(raw)), out / "metadata.json")
    print(out)


def cmd_train(args) -> None:
    scaler = load_scaler(_require(args.scaler))
    ds = read_dataset_csv(_require(args.dataset), scaler)
    if args.lag is not None and args.lag != ds.lag_config.lag_frames:
        raise ValueError(f"--lag {args.lag} does not match the dataset's lag {ds.lag_config.lag_frames}")
    hp = _hp(args)
    model = train(ds, hp)
    save_model(model, args.out)
    write_metadata(_run_meta("train", args, hyperparams=asdict(hp), n_rows=len(ds)), Path(str(args.out) + ".meta.json"))
    print(args.out)


def _write_fold_outputs(report, out: Path, tracks: bool) -> None:
    write_report(report, out / "report.csv")
    write_metadata(report.metadata, out / "metadata.json")
    write_error_quantiles(report, out / "error_quantiles.csv")
    if tracks:
        d = _out_dir(out / "predicted")
        for fold in report.folds:
            write_track_csv(fold.predicted, d / f"{fold.stats.holdout_id}.csv")


def cmd_evaluate(args) -> None:
    out = _out_dir(args.out)
    hp = _hp(args)
    if args.tracks:
        pairs = _read_pairs(Path(args.tracks))
        rate = next(iter(pairs.values()))[0].sample_rate_hz
        lag = _lag(args, rate)
        report = leave_one_subject_out(pairs, lag, hp, args.exclude, _run_meta("evaluate", args))
    else:
        train_env, test_env = _env(args.train_env), _env(args.test_env or args.train_env)
        train_pairs = _env_pairs(train_env, args.subjects, args.seed, args)
        rate = ENV_LAG[train_env][0]
        train_lag = _lag(args, rate)
        if test_env == train_env:
            report = leave_one_subject_out(train_pairs, train_lag, hp, args.exclude, _run_meta("evaluate", args))
        else:
            test_pairs = _env_pairs(test_env, args.test_runs, args.seed + 1, args)
            test_rate, test_lag_frames = ENV_LAG[test_env]
            test_lag = LagConfig(test_lag_frames, not args.no_rel, test_rate)
            train_pairs = {k: v for k, v in train_pairs.items() if k not in set(args.exclude)}
            report = transfer_evaluate(train_pairs, test_pairs, train_lag, test_lag, hp, _run_meta("evaluate", args))
    _write_fold_outputs(report, out, args.write_tracks)
    print(out / "report.csv")


def _env_pairs(env: str, n: int, seed: int, args) -> dict:
    if env == "physical-40hz":
        return camera_cohort_tracks(physical_cohort(n, seed, args.jitter), _sg(args))
    return world_cohort_tracks(sim_cohort(n, seed, args.jitter))


def cmd_predict_track(args) -> None:
    model = load_model(_require(args.model))
    scaler = load_scaler(_require(args.scaler))
    subject, robot = align_tracks(read_track_csv(_require(args.subject)), read_track_csv(_require(args.robot)))
    lag = _lag(args, subject.sample_rate_hz)
    if lag.include_relative_distance != (len(model.feature_names) == 5):
        lag = LagConfig(lag.lag_frames, len(model.feature_names) == 5, lag.sample_rate_hz)
    predicted = predict_track(model, subject, robot, lag, scaler)
    write_track_csv(predicted, args.out)
    write_metadata(_run_meta("predict-track", args), Path(str(args.out) + ".meta.json"))
    print(args.out)


def cmd_pipeline(args) -> None:
    """simulate -> ingest -> calibrate/apply -> smooth -> dataset -> evaluate."""
    out = _out_dir(args.out)
    rate, default_lag = ENV_LAG[args.preset]
    if args.lag is None:
        args.lag = default_lag
    if args.preset == "physical-40hz":
        pairs = camera_cohort_tracks(physical_cohort(args.subjects, args.seed, args.jitter), _sg(args))
    else:
        pairs = world_cohort_tracks(sim_cohort(args.subjects, args.seed, args.jitter))
    _write_pairs(pairs, _out_dir(out / "tracks"))
    lag = _lag(args, rate)
    report = leave_one_subject_out(pairs, lag, _hp(args), args.exclude, _run_meta("pipeline", args))
    _write_fold_outputs(report, out, args.write_tracks)
    print(out / "report.csv")


# --- argument parsing --------------------------------------------------------


def _add_filter_args(p) -> None:
    p.add_argument("--window", type=int, default=31, help="Savitzky-Golay window (odd)")
    p.add_argument("--order", type=int, default=3, help="Savitzky-Golay polynomial order")


def _add_model_args(p) -> None:
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--min-child-weight", type=float, default=1.0)


def _add_lag_args(p, default=10) -> None:
    p.add_argument("--lag", type=int, default=default, help="lag in frames")
    p.add_argument("--no-rel", action="store_true", help="drop the relative-distance feature")


def _ids(text: str) -> list[str]:
    return [s for s in text.split(",") if s]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evactrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic cohort and its observation files")
    p.add_argument("--preset", choices=PRESETS, default="physical-40hz")
    p.add_argument("--config", help="scenario config file (overrides --preset/--seed)")
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit camera models from calibration files")
    p.add_argument("calibrations", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ingest", help="keypoints + detections -> stitched world tracks")
    p.add_argument("--cameras", nargs="+", required=True, help="camera model files")
    p.add_argument("--observations", required=True, help="directory with <camera>_keypoints.jsonl / _detections.csv")
    p.add_argument("--fps", type=float, default=40.0)
    p.add_argument("--confidence", type=float, default=0.5)
    p.add_argument("--min-detection-confidence", type=float, default=0.0)
    p.add_argument("--max-conflict", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("smooth", help="Savitzky-Golay smoothing of a track file")
    p.add_argument("track")
    _add_filter_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("dataset", help="per-subject tracks -> scaled lag-feature dataset")
    p.add_argument("--tracks", required=True, help="directory of <id>/subject.csv + robot.csv")
    _add_lag_args(p)
    p.add_argument("--env", default="physical")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the X/Y boosted-tree ensembles")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scaler", required=True)
    p.add_argument("--lag", type=int, default=None, help="assert the dataset's lag")
    _add_model_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="leave-one-subject-out or cross-environment evaluation")
    p.add_argument("--tracks", help="directory of <id>/subject.csv + robot.csv (leave-one-subject-out)")
    p.add_argument("--train-env", default="physical", help="physical | sim (synthetic cohorts)")
    p.add_argument("--test-env", default=None)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--test-runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.15)
    p.add_argument("--exclude", type=_ids, default=[], help="comma-separated subject ids")
    p.add_argument("--write-tracks", action="store_true")
    _add_lag_args(p)
    _add_filter_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict-track", help="one-step predicted track for one subject")
    p.add_argument("--model", required=True)
    p.add_argument("--scaler", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--robot", required=True)
    _add_lag_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_track)

    p = sub.add_parser("pipeline", help="end-to-end synthetic reproduction with a holdout report")
    p.add_argument("--preset", choices=PRESETS, default="physical-40hz")
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.15)
    p.add_argument("--exclude", type=_ids, default=[])
    p.add_argument("--write-tracks", action="store_true")
    _add_lag_args(p, default=None)
    _add_filter_args(p)
    p.add_argument("--no-smooth", action="store_true")
    _add_model_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("EVACTRACK_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except EvacTrackError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFound", "message": str(exc)}), file=sys.stderr)
        return 2
    except ValueError as exc:
        print(json.dumps({"error": "InvalidArgument", "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
