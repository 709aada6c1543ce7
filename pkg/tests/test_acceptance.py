"""Acceptance suite: one test per criterion, summarized at the end of the run."""

import time

import numpy as np
import pytest

from evactrack.cli import main
from evactrack.dataset import LagConfig, assert_no_leakage, build_lagged_rows, concat_datasets
from evactrack.errors import InsufficientPoints
from evactrack.evaluation import ErrorStats, aggregate_report, format_report, leave_one_subject_out, report_value, transfer_evaluate
from evactrack.filter import SgConfig, sg_coefficients, sg_filter
from evactrack.gbt import GbtHyperparams, fit_ensemble
from evactrack.geometry import calibrate_camera, cameras_to_world, pixels_to_camera
from evactrack.pipeline import camera_cohort_tracks, physical_cohort, sim_cohort, world_cohort_tracks
from evactrack.simgen import default_cameras, export_calibration, project_to_camera, simulate_truth, ScenarioConfig
from oracles import brute_force_tree, nested_equal, tree_to_nested

SEED = 7
N_SUBJECTS = 12
LAG_40HZ = LagConfig(10, True, 40.0)
LAG_1HZ = LagConfig(1, True, 1.0)

HOLDOUT_TABLE = [
    (0.109, 0.067), (0.087, 0.074), (0.112, 0.070), (0.095, 0.081), (0.090, 0.057), (0.077, 0.044),
    (0.117, 0.079), (0.098, 0.064), (0.090, 0.095), (0.109, 0.076), (0.108, 0.083), (0.103, 0.066),
]
SIM_TABLE = [(6.322, 1.654), (8.919, 2.173), (3.688, 2.834), (7.109, 2.574), (7.480, 2.015)]


def _stats(table):
    return [ErrorStats(str(i), mu, sd, 1) for i, (mu, sd) in enumerate(table)]


@pytest.fixture(scope="module")
def cohort():
    scenarios = physical_cohort(N_SUBJECTS, SEED)
    return scenarios, camera_cohort_tracks(scenarios)


@pytest.fixture(scope="module")
def in_domain(cohort):
    start = time.perf_counter()
    report = leave_one_subject_out(cohort[1], LAG_40HZ, GbtHyperparams())
    return report, time.perf_counter() - start


@pytest.mark.criterion("C1", "holdout table aggregation reproduces 0.099 / 0.071")
def test_c1_holdout_table_aggregation():
    start = time.perf_counter()
    agg = aggregate_report(_stats(HOLDOUT_TABLE))
    elapsed = time.perf_counter() - start
    assert agg.mu_e == pytest.approx(0.0996, abs=5e-5)
    assert agg.sigma_e == pytest.approx(0.0713, abs=5e-5)
    assert report_value(agg.mu_e) == "0.099"
    assert report_value(agg.sigma_e) == "0.071"
    assert elapsed < 1.0


@pytest.mark.criterion("C2", "simulation table aggregation reproduces 6.703 / 2.250")
def test_c2_simulation_table_aggregation():
    agg = aggregate_report(_stats(SIM_TABLE))
    assert agg.mu_e == pytest.approx(6.7036, abs=5e-5)
    assert agg.sigma_e == pytest.approx(2.250, abs=5e-5)
    assert (report_value(agg.mu_e), report_value(agg.sigma_e)) == ("6.703", "2.250")


@pytest.mark.criterion("C3", "Savitzky-Golay reproduces low-order polynomials exactly")
def test_c3_savitzky_golay_exactness():
    rng = np.random.default_rng(0)
    t = np.arange(120) / 40.0
    for window, order in ((5, 2), (11, 3), (31, 3)):
        cfg = SgConfig(window, order)
        for degree in range(order + 1):
            coeffs = rng.normal(size=degree + 1)
            signal = np.polynomial.polynomial.polyval(t, coeffs)
            np.testing.assert_allclose(sg_filter(signal, cfg), signal, rtol=0, atol=1e-9)
    np.testing.assert_allclose(sg_coefficients(SgConfig(5, 2)), np.array([-3, 12, 17, 12, -3]) / 35, rtol=0, atol=1e-12)


@pytest.mark.criterion("C4", "calibration recovers the depth model and round-trips points")
def test_c4_calibration_recovery():
    truth = simulate_truth(ScenarioConfig())[1]
    for true_cam in default_cameras():
        fitted, _ = calibrate_camera(export_calibration(true_cam))
        rows = np.linspace(*true_cam.pixel_range, 400)
        want = true_cam.depth(rows)
        assert np.all(np.abs(fitted.depth(rows) - want) <= 0.01 * np.abs(want))
        px = project_to_camera(truth, fitted, noise_sigma=0.0)
        assert len(px) > 0
        back = cameras_to_world(pixels_to_camera(px.uv, fitted), fitted.pose)
        assert np.max(np.hypot(*(back - truth.xy[px.frames]).T)) <= 1e-6
    with pytest.raises(InsufficientPoints):
        calibrate_camera({**export_calibration(default_cameras()[0], n_rows=2)})


@pytest.mark.criterion("C5", "boosted-tree splits match exhaustive enumeration")
def test_c5_gbt_oracle_equivalence():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    for run in range(50):
        n, d = int(rng.integers(4, 65)), int(rng.integers(1, 6))
        X = rng.uniform(size=(n, d))
        if run % 3 == 0:
            X = np.round(X * 5) / 5
        y = rng.normal(size=n)
        hp = GbtHyperparams(
            rounds=4,
            max_depth=int(rng.integers(1, 4)),
            learning_rate=0.3,
            reg_lambda=float(rng.uniform(0, 2)),
            gamma=0.0,
            min_child_weight=float(rng.choice([0.0, 1.0, 3.0])),
        )
        base, trees, losses = fit_ensemble(X, y, hp)
        pred = np.full(n, base)
        for tree in trees:
            oracle = brute_force_tree(X, pred - y, hp.reg_lambda, hp.gamma, hp.min_child_weight, hp.max_depth)
            assert nested_equal(tree_to_nested(tree), oracle), f"run {run}: split mismatch"
            pred = pred + hp.learning_rate * tree.predict(X)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:])), f"run {run}: loss increased"
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion("C6", "12-subject leave-one-subject-out at 40 Hz")
def test_c6_in_domain(cohort, in_domain):
    scenarios, tracks = cohort
    sq = []
    for sc, (subject, _) in zip(scenarios, tracks.values()):
        idx = np.rint(subject.t * 40).astype(int)
        sq.append(np.sum((subject.xy - sc.subject_truth.xy[idx]) ** 2, axis=1))
    assert np.sqrt(np.mean(np.concatenate(sq))) <= 0.02
    report, elapsed = in_domain
    assert len(report.stats) == N_SUBJECTS
    print(f"\nC6 mean mu_e={report.aggregate.mu_e:.4f} m, worst fold {max(s.mu_e for s in report.stats):.4f} m, {elapsed:.1f} s")
    assert report.aggregate.mu_e <= 0.15
    assert all(s.mu_e <= 0.25 for s in report.stats)
    assert elapsed < 300


@pytest.mark.criterion("C7", "transfer to the 1 Hz environment degrades but stays bounded")
def test_c7_transfer(cohort, in_domain):
    test_tracks = world_cohort_tracks(sim_cohort(5, SEED + 1))
    report = transfer_evaluate(cohort[1], test_tracks, LAG_40HZ, LAG_1HZ, GbtHyperparams())
    assert all(np.isfinite([s.mu_e, s.sigma_e]).all() for s in report.stats)
    pts = np.concatenate([np.vstack([s.xy, r.xy]) for s, r in test_tracks.values()])
    diagonal = float(np.hypot(*(pts.max(0) - pts.min(0))))
    print(f"\nC7 mean mu_e={report.aggregate.mu_e:.3f} m, bbox diagonal {diagonal:.1f} m")
    assert report.aggregate.mu_e > in_domain[0].aggregate.mu_e
    assert report.aggregate.mu_e <= 0.15 * diagonal


@pytest.mark.criterion("C8", "same seed gives byte-identical reports")
def test_c8_determinism(tmp_path, in_domain):
    argv = ["pipeline", "--subjects", str(N_SUBJECTS), "--seed", str(SEED)]
    assert main([*argv, "--out", str(tmp_path / "a")]) == 0
    assert main([*argv, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "report.csv").read_bytes()
    assert a == (tmp_path / "b" / "report.csv").read_bytes()
    assert a.decode() == format_report(in_domain[0])


@pytest.mark.criterion("C9", "no future features and isolated folds, checked exhaustively")
def test_c9_leakage_guards(cohort, in_domain):
    tracks = cohort[1]
    datasets = [build_lagged_rows(s, r, LAG_40HZ, subject_id=sid) for sid, (s, r) in tracks.items()]
    datasets += [
        build_lagged_rows(s, r, LAG_1HZ, subject_id=sid) for sid, (s, r) in world_cohort_tracks(sim_cohort(5, SEED + 1)).items()
    ]
    for ds, (s, r) in zip(datasets, [*tracks.values(), *world_cohort_tracks(sim_cohort(5, SEED + 1)).values()]):
        assert_no_leakage(ds)
        m = ds.lag_config.lag_frames
        # every feature comes from sample k - m, every target from sample k
        np.testing.assert_array_equal(ds.features[:, 0:2], s.xy[:-m])
        np.testing.assert_array_equal(ds.features[:, 2:4], r.xy[:-m])
        np.testing.assert_array_equal(ds.targets, s.xy[m:])
        np.testing.assert_array_equal(ds.t_feature, s.t[:-m])
    by_id = {ds.subject_id[0]: ds for ds in datasets[:N_SUBJECTS]}
    for fold in in_domain[0].folds:
        holdout = fold.stats.holdout_id
        assert holdout not in fold.training_ids
        assert set(fold.training_ids) | {holdout} == set(tracks)
        training = concat_datasets([by_id[sid] for sid in fold.training_ids])
        assert holdout not in set(training.subject_id)
