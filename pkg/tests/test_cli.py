import json
import subprocess
import sys

import numpy as np
import pytest

from evactrack.cli import main
from evactrack.evaluation import read_report
from evactrack.gbt import load_model
from evactrack.tracks import read_track_csv

FAST = ["--rounds", "30", "--depth", "4", "--eta", "0.3"]


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--subjects", "3", "--seed", "2", "--out", str(out)]) == 0
    return out


def test_simulate_layout(simulated):
    assert sorted(p.name for p in (simulated / "calibration").iterdir()) == [
        "entry.json", "exit.json", "hallway.json", "room.json"]
    s1 = simulated / "subjects" / "S01"
    assert (s1 / "truth_subject.csv").exists()
    assert (s1 / "entry_keypoints.jsonl").exists() and (s1 / "entry_detections.csv").exists()
    assert json.loads((simulated / "metadata.json").read_text())["command"] == "simulate"


def test_calibrate_ingest_dataset_train_predict(simulated, tmp_path, capsys):
    cams = tmp_path / "cams"
    cal = sorted(str(p) for p in (simulated / "calibration").iterdir())
    assert main(["calibrate", *cal, "--out", str(cams)]) == 0
    models = sorted(p.name for p in cams.glob("*.camera.json"))
    assert len(models) == 4
    report = (cams / "calibration_report.csv").read_text().splitlines()
    assert len(report) == 2 + 4

    tracks = tmp_path / "tracks"
    for sid in ("S01", "S02", "S03"):
        raw = tmp_path / "raw" / sid
        assert main(["ingest", "--cameras", *map(str, cams.glob("*.camera.json")),
                     "--observations", str(simulated / "subjects" / sid), "--out", str(raw)]) == 0
        (tracks / sid).mkdir(parents=True)
        for agent in ("subject", "robot"):
            assert main(["smooth", str(raw / f"{agent}.csv"), "--out", str(tracks / sid / f"{agent}.csv")]) == 0

    ds = tmp_path / "ds"
    assert main(["dataset", "--tracks", str(tracks), "--out", str(ds)]) == 0
    model = tmp_path / "model.json"
    assert main(["train", "--dataset", str(ds / "dataset.csv"), "--scaler", str(ds / "scaler.json"),
                 "--lag", "10", *FAST, "--out", str(model)]) == 0
    assert load_model(model).feature_names[0] == "xs_l10"

    pred = tmp_path / "pred.csv"
    assert main(["predict-track", "--model", str(model), "--scaler", str(ds / "scaler.json"),
                 "--subject", str(tracks / "S01" / "subject.csv"), "--robot", str(tracks / "S01" / "robot.csv"),
                 "--out", str(pred)]) == 0
    p = read_track_csv(pred)
    truth = read_track_csv(tracks / "S01" / "subject.csv")
    assert np.mean(np.hypot(*(p.xy - truth.xy[10:]).T)) < 0.1

    # the lag recorded in the dataset is enforced
    assert main(["train", "--dataset", str(ds / "dataset.csv"), "--scaler", str(ds / "scaler.json"),
                 "--lag", "20", "--out", str(tmp_path / "m20.json")]) == 2
    assert _error(capsys)["error"] == "InvalidArgument"

    ev = tmp_path / "ev"
    assert main(["evaluate", "--tracks", str(tracks), *FAST, "--write-tracks", "--out", str(ev)]) == 0
    rows = read_report(ev / "report.csv")
    assert [r[0] for r in rows] == ["S01", "S02", "S03", "mean"]
    assert (ev / "predicted" / "S02.csv").exists()


def test_evaluate_longer_lag(simulated, tmp_path):
    tracks = tmp_path / "tracks"
    for sid in ("S01", "S02"):
        (tracks / sid).mkdir(parents=True)
        for agent in ("subject", "robot"):
            (tracks / sid / f"{agent}.csv").write_bytes((simulated / "subjects" / sid / f"truth_{agent}.csv").read_bytes())
    ev = tmp_path / "ev"
    assert main(["evaluate", "--tracks", str(tracks), "--lag", "20", *FAST, "--out", str(ev)]) == 0
    assert json.loads((ev / "metadata.json").read_text())["lag"]["lag_frames"] == 20
    assert all(r[3] == len(read_track_csv(tracks / "S01" / "subject.csv")) - 20 for r in read_report(ev / "report.csv")[:1])


def test_non_monotone_calibration_is_reported(simulated, tmp_path, capsys):
    doc = json.loads((simulated / "calibration" / "entry.json").read_text())
    key = next(k for k in doc if "depth" in k and isinstance(doc[k], list))
    pairs = doc[key]
    n = len(pairs)
    for i, pair in enumerate(pairs):
        pair[1] = 5.0 + 3.0 * np.sin(6.0 * i / n) if isinstance(pair, list) else pair
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["calibrate", str(bad), "--out", str(tmp_path / "c")]) == 2
    err = _error(capsys)
    assert err["error"] == "NonMonotoneFit"
    assert "entry" in err["message"]


def test_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["calibrate", str(missing), "--out", str(tmp_path / "c")]) == 2
    err = _error(capsys)
    assert err["error"] == "FileNotFound" and str(missing) in err["message"]


def test_foreign_format_version_rejected(simulated, tmp_path, capsys):
    path = simulated / "subjects" / "S01" / "truth_subject.csv"
    lines = path.read_text().splitlines(keepends=True)
    lines[0] = lines[0].replace(" v1 ", " v7 ", 1)
    bad = tmp_path / "subject.csv"
    bad.write_text("".join(lines))
    assert main(["smooth", str(bad), "--out", str(tmp_path / "s.csv")]) == 2
    assert _error(capsys)["error"] == "VersionMismatch"


def test_pipeline_and_transfer(tmp_path):
    out = tmp_path / "p"
    assert main(["pipeline", "--subjects", "3", "--seed", "1", *FAST, "--out", str(out)]) == 0
    for name in ("report.csv", "metadata.json", "error_quantiles.csv"):
        assert (out / name).exists()
    assert sorted(p.name for p in (out / "tracks").iterdir()) == ["S01", "S02", "S03"]
    rows = read_report(out / "report.csv")
    assert rows[-1][0] == "mean" and rows[-1][1] < 0.15

    tr = tmp_path / "t"
    assert main(["evaluate", "--train-env", "physical", "--test-env", "sim", "--subjects", "3",
                 "--test-runs", "2", *FAST, "--out", str(tr)]) == 0
    rows = read_report(tr / "report.csv")
    assert [r[0] for r in rows] == ["Sim1", "Sim2", "mean"]
    assert all(np.isfinite(r[1]) for r in rows)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "evactrack", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
