import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evactrack.errors import MalformedRecord, NoUsableKeypoints, TooFewObservations
from evactrack.ingest import (
    LEFT_ANKLE,
    RIGHT_ANKLE,
    BBox,
    PixelTrack,
    PoseFrame,
    extract_subject_track,
    fill_gaps,
    format_robot_detections,
    parse_pose_frames,
    parse_robot_detections,
    robot_point_from_bbox,
    robot_track_from_detections,
    serialize_pose_frames,
)


def _record(frame, left=(100.0, 400.0, 0.9), right=(0.0, 0.0, 0.0), score=0.9):
    kp = [0.0] * 51
    kp[3 * LEFT_ANKLE : 3 * LEFT_ANKLE + 3] = left
    kp[3 * RIGHT_ANKLE : 3 * RIGHT_ANKLE + 3] = right
    return {"frame": frame, "person_score": score, "keypoints": kp}


def test_parse_single_record_exposes_left_ankle():
    frames = parse_pose_frames([json.dumps(_record(0, left=(12.5, 300.0, 0.7)))])
    assert len(frames) == 1
    assert frames[0].keypoints.shape == (17, 3)
    assert frames[0].keypoint(15) == (12.5, 300.0, 0.7)


def test_parse_empty_stream():
    assert parse_pose_frames([]) == []
    assert parse_pose_frames(["", "  "]) == []


@pytest.mark.parametrize(
    "bad",
    [
        {"frame": 0, "person_score": 1.0, "keypoints": [0.0] * 48},
        {"frame": 0, "person_score": 1.0, "keypoints": [0.0] * 50 + [-0.1]},
        {"frame": 0, "keypoints": [0.0] * 51},
        {"frame": "x", "person_score": 1.0, "keypoints": [0.0] * 51},
        "not json",
    ],
)
def test_parse_rejects_malformed(bad):
    with pytest.raises(MalformedRecord):
        parse_pose_frames([bad if isinstance(bad, str) else json.dumps(bad)])


def test_parse_orders_by_frame():
    frames = parse_pose_frames([json.dumps(_record(3)), json.dumps(_record(1)), json.dumps(_record(2))])
    assert [f.frame_index for f in frames] == [1, 2, 3]


def test_serialize_round_trip_is_lossless():
    rng = np.random.default_rng(0)
    frames = [PoseFrame(i, np.column_stack([rng.uniform(0, 640, 17), rng.uniform(0, 480, 17), rng.uniform(0, 1, 17)]), rng.uniform()) for i in range(5)]
    back = parse_pose_frames(serialize_pose_frames(frames))
    for a, b in zip(frames, back):
        assert a.frame_index == b.frame_index and a.person_score == b.person_score
        np.testing.assert_array_equal(a.keypoints, b.keypoints)


def _frames(*records):
    return parse_pose_frames([json.dumps(r) for r in records])


def test_left_ankle_preferred():
    tr = extract_subject_track(_frames(_record(0, left=(100, 400, 0.9), right=(200, 400, 0.95))))
    np.testing.assert_array_equal(tr.uv, [[100, 400]])


def test_right_ankle_fallback():
    tr = extract_subject_track(_frames(_record(0, left=(100, 400, 0.2), right=(110, 402, 0.8))), confidence_threshold=0.5)
    np.testing.assert_array_equal(tr.uv, [[110, 402]])


def test_low_confidence_frame_is_a_gap():
    tr = extract_subject_track(
        _frames(_record(0), _record(1, left=(1, 1, 0.1), right=(1, 1, 0.1)), _record(2))
    )
    assert tr.frames.tolist() == [0, 2]


def test_no_usable_keypoints():
    with pytest.raises(NoUsableKeypoints):
        extract_subject_track(_frames(_record(0, left=(1, 1, 0.1))))


def test_multi_person_nearest_to_previous():
    frames = _frames(
        _record(0, left=(110, 405, 0.9)),
        _record(1, left=(500, 400, 0.9), score=0.99),
        _record(1, left=(100, 400, 0.9), score=0.5),
    )
    tr = extract_subject_track(frames)
    np.testing.assert_array_equal(tr.uv[1], [100, 400])


def test_multi_person_first_frame_highest_score():
    frames = _frames(_record(0, left=(500, 400, 0.9), score=0.6), _record(0, left=(100, 400, 0.9), score=0.8))
    np.testing.assert_array_equal(extract_subject_track(frames).uv, [[100, 400]])


@settings(max_examples=100, deadline=None)
@given(
    confs=st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30),
    thr=st.floats(0.05, 0.95),
)
def test_never_emits_below_threshold(confs, thr):
    recs = [_record(i, left=(i, 2.0 * i, cl), right=(i + 0.5, 2.0 * i, cr)) for i, (cl, cr) in enumerate(confs)]
    frames = _frames(*recs)
    try:
        tr = extract_subject_track(frames, thr)
    except NoUsableKeypoints:
        assert all(cl < thr and cr < thr for cl, cr in confs)
        return
    for f, (u, _) in zip(tr.frames, tr.uv):
        cl, cr = confs[f]
        if u == f:
            assert cl >= thr
        else:
            assert cl < thr <= cr


@pytest.mark.parametrize(
    "box, expected",
    [((10, 20, 30, 60), (20, 60)), ((10, 20, 10.5, 60), (10.25, 60)), ((300, 0, 340, 100), (320, 100))],
)
def test_robot_point_bottom_center(box, expected):
    assert robot_point_from_bbox(BBox(*box)) == expected


def test_degenerate_bbox_rejected():
    with pytest.raises(MalformedRecord):
        BBox(10, 20, 10, 60)


def test_detection_csv_round_trip_and_best_box():
    text = "frame,u_min,v_min,u_max,v_max,confidence\n0,10,20,30,60,0.9\n0,100,20,130,60,0.95\n2,10,20,30,61,0.8\n"
    dets = parse_robot_detections(text.splitlines())
    tr = robot_track_from_detections(dets)
    assert tr.frames.tolist() == [0, 2]
    np.testing.assert_array_equal(tr.uv, [[115, 60], [20, 61]])
    again = parse_robot_detections(format_robot_detections(dets).splitlines())
    assert [(d.frame, d.bbox, d.confidence) for d in again] == [(d.frame, d.bbox, d.confidence) for d in dets]


def _pix(frames, uv, source=()):
    return PixelTrack("robot", "c", np.array(frames), np.array(uv, float), source)


def test_fill_gaps_identity_without_gaps():
    tr = _pix([0, 1, 2], [[0, 0], [1, 1], [2, 2]])
    out = fill_gaps(tr)
    np.testing.assert_array_equal(out.uv, tr.uv)
    assert out.source == ("observed",) * 3


def test_fill_gaps_midpoint():
    out = fill_gaps(_pix([0, 2], [[0, 0], [2, 2]]))
    assert out.frames.tolist() == [0, 1, 2]
    np.testing.assert_array_equal(out.uv[1], [1, 1])
    assert out.source[1] == "interpolated"


def test_fill_gaps_affine_interior():
    out = fill_gaps(_pix([0, 4], [[0, 0], [4, 8]]))
    np.testing.assert_allclose(out.uv[1:4], [[1, 2], [2, 4], [3, 6]])


def test_fill_gaps_needs_two_observations():
    with pytest.raises(TooFewObservations):
        fill_gaps(_pix([3], [[1, 1]]))


@settings(max_examples=100, deadline=None)
@given(
    steps=st.lists(st.integers(1, 6), min_size=1, max_size=15),
    pts=st.lists(st.tuples(st.floats(0, 640), st.floats(0, 480)), min_size=16, max_size=16),
)
def test_fill_gaps_collinear_and_idempotent(steps, pts):
    frames = np.concatenate([[0], np.cumsum(steps)])
    uv = np.array(pts[: len(frames)])
    tr = _pix(frames, uv)
    out = fill_gaps(tr)
    assert np.all(np.diff(out.frames) == 1)
    for a, b in zip(frames[:-1], frames[1:]):
        pa, pb = uv[frames.tolist().index(a)], uv[frames.tolist().index(b)]
        for f in range(a + 1, b):
            p = out.uv[f]
            w = (f - a) / (b - a)
            np.testing.assert_allclose(p, pa + w * (pb - pa), atol=1e-9)
            # cross product ~ 0: on the segment
            cross = (pb - pa)[0] * (p - pa)[1] - (pb - pa)[1] * (p - pa)[0]
            assert abs(cross) <= 1e-9 * max(1.0, np.hypot(*(pb - pa)) ** 2)
    again = fill_gaps(out)
    np.testing.assert_array_equal(again.uv, out.uv)
    assert again.source == out.source
