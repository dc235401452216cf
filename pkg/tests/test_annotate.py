import math

import numpy as np
import pytest

from lidarannot import annotate as ann
from lidarannot.annotate import (
    AnnotateParams,
    Buffer,
    PipelineStageError,
    RefinedMap,
    annotate_session,
    backproject_labels,
    build_buffer,
    extract_ground_ransac,
    filter_frame,
    groundtruth_labels,
    label_buffer,
    label_counts,
    match_refined,
    refine_map,
    threshold_labels,
)
from lidarannot.core import GtClass, InvalidParameterError, PointCloud, Pose, SemanticLabel
from lidarannot.pointmap import IcpConfig, NormalParams, PointMap, map_update, prepare_frame
from lidarannot.pointray import RayParams
from lidarannot.simworld import Furniture, WorldSpec, empty_room, room_walls, simulate_session

L = SemanticLabel


def cloud_map(points, normals=None):
    pts = np.asarray(points, dtype=np.float64)
    if normals is None:
        normals = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    m = PointMap()
    map_update(m, PointCloud(pts, normals=normals, scores=np.ones(len(pts))), Pose())
    return m


def floor_and_walls(rng):
    """(points, normals) of a noisy floor patch and of two walls meeting in a corner."""
    floor = np.column_stack([rng.uniform(0, 6, 3000), rng.uniform(0, 4, 3000), rng.normal(0, 0.005, 3000)])
    wall_x = np.column_stack([np.zeros(800), rng.uniform(0, 4, 800), rng.uniform(0.1, 2.5, 800)])
    wall_y = np.column_stack([rng.uniform(0, 6, 800), np.full(800, 4.0), rng.uniform(0.1, 2.5, 800)])
    normals = np.vstack([np.tile([0.0, 0, 1], (3000, 1)), np.tile([1.0, 0, 0], (800, 1)), np.tile([0.0, -1, 0], (800, 1))])
    return np.vstack([floor, wall_x, wall_y]), normals


# -- parameters and thresholds ------------------------------------------------------------


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        AnnotateParams(tau_short=0.1, tau_long=0.5)
    with pytest.raises(InvalidParameterError):
        AnnotateParams(tau_refine=0.0)


def test_threshold_labels():
    p = np.array([0.95, 0.6, 0.5, 0.1, 0.1, 0.0])
    n = np.array([20, 20, 4, 20, 10, 50])
    got = threshold_labels(p, n, AnnotateParams())
    assert got.tolist() == [L.SHORT_T, L.UNCERTAIN, L.UNCERTAIN, L.LONG_T, L.UNCERTAIN, L.LONG_T]
    # the ordering invariant keeps the classes disjoint
    assert not np.any((p > 0.6) & (p < 0.2))


# -- refine ------------------------------------------------------------------------------


def _fake_pointray(n_obs, hits):
    def run(m, frames, poses, ray):
        m.n_obs[:] = n_obs
        m.movable_hits[:] = hits

    return run


def test_refine_keeps_point_at_threshold(monkeypatch):
    m = cloud_map([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    monkeypatch.setattr(ann, "pointray_session", _fake_pointray([20, 20, 20], [18, 19, 0]))
    out = refine_map(m, [], [])
    # p = 0.9 is not higher than tau_refine; p = 0.95 is
    assert out.positions[:, 0].tolist() == [0.0, 2.0]
    assert np.all(out.n_obs == 0) and np.all(out.movable_hits == 0)
    assert len(m) == 3


def test_refine_empty_result_aborts(monkeypatch):
    m = cloud_map([[0.0, 0, 0]])
    monkeypatch.setattr(ann, "pointray_session", _fake_pointray([20], [20]))
    with pytest.raises(PipelineStageError, match="refine"):
        refine_map(m, [], [])


def test_refine_removes_absent_box(coarse_sensor):
    box = Furniture("box", 4.0, 4.5)
    pose = Pose.from_xyz_yaw(1.5, 4.5, 0.6, 0.0)
    with_box = WorldSpec(bounds=(0, 0, 12, 9), walls=room_walls(), furniture=(box,))
    without = WorldSpec(bounds=(0, 0, 12, 9), walls=room_walls())
    first = simulate_session(with_box, coarse_sensor, [(pose, 0.0)]).frames[0]
    m = PointMap()
    map_update(m, prepare_frame(first, IcpConfig(), NormalParams()), pose)
    sess = simulate_session(without, coarse_sensor, [(pose, 0.5 * i) for i in range(15)])
    out = refine_map(m, sess.frames, sess.poses, ray=RayParams(d_phi=coarse_sensor.azimuth_step))
    facing = (np.abs(m.positions[:, 0] - 3.7) < 0.02) & (np.abs(m.positions[:, 1] - 4.5) < 0.3) & (m.normals[:, 0] < -0.9)
    assert facing.sum() > 10
    assert not np.any(np.isin(m.keys[facing], out.keys))
    # refinement only ever deletes
    assert np.all(np.isin(out.keys, m.keys))
    walls = np.abs(m.positions[:, 0] - 12.0) < 0.02
    assert np.isin(m.keys[walls], out.keys).all()


# -- RANSAC ----------------------------------------------------------------------------------


def test_ransac_splits_floor_from_walls():
    m = cloud_map(*floor_and_walls(np.random.default_rng(0)))
    r = extract_ground_ransac(m, seed=1)
    is_floor = m.positions[:, 2] < 0.03
    assert (r.labels[is_floor] == L.GROUND).mean() >= 0.99
    assert np.all(r.labels[m.positions[:, 2] > 0.1] == L.PERMANENT)
    assert abs(r.plane[2]) > 0.999


def test_ransac_walls_only_gives_no_ground(caplog):
    pts, normals = floor_and_walls(np.random.default_rng(1))
    r = extract_ground_ransac(cloud_map(pts[3000:], normals[3000:]), seed=0)
    assert np.all(r.labels == L.PERMANENT) and r.plane is None
    assert "no horizontal plane" in caplog.text


def test_ransac_rejects_tilted_plane():
    rng = np.random.default_rng(2)
    u, v = rng.uniform(0, 4, 3000), rng.uniform(0, 4, 3000)
    tilted = np.column_stack([u, v, u])  # 45 degrees
    r = extract_ground_ransac(cloud_map(tilted, np.tile([-1.0, 0, 1] / np.sqrt(2), (3000, 1))), seed=0)
    assert np.all(r.labels == L.PERMANENT)


def test_ransac_deterministic():
    m = cloud_map(*floor_and_walls(np.random.default_rng(3)))
    assert np.array_equal(extract_ground_ransac(m, seed=5).labels, extract_ground_ransac(m, seed=5).labels)


# -- buffer membership and labels ---------------------------------------------------------------


def test_match_refined_voxel_and_neighbourhood():
    refined = cloud_map([[0.015, 0.015, 0.015], [0.3, 0.3, 0.3]])
    buf = cloud_map([[0.016, 0.014, 0.015], [0.045, 0.015, 0.015], [0.9, 0.9, 0.9]])
    assert match_refined(buf, refined, neighborhood=False).tolist() == [0, -1, -1]
    assert match_refined(buf, refined).tolist() == [0, 0, -1]
    with pytest.raises(InvalidParameterError):
        match_refined(PointMap(dl=0.05), refined)


def test_label_buffer_inherits_refined_labels():
    refined_map = cloud_map([[0.015, 0.015, 0.015], [1.0, 0, 0]])
    refined = RefinedMap(refined_map, np.array([L.GROUND, L.PERMANENT], dtype=np.uint8))
    bm = cloud_map([[0.015, 0.015, 0.015], [1.0, 0, 0], [3.0, 0, 0], [4.0, 0, 0], [5.0, 0, 0]])
    bm.n_obs[:] = [20, 20, 20, 20, 4]
    buf = Buffer(bm, match_refined(bm, refined_map), [])
    labels = label_buffer(buf, refined, np.array([0.95, 0.95, 0.95, 0.0, 0.5]))
    assert labels.tolist() == [L.GROUND, L.PERMANENT, L.SHORT_T, L.LONG_T, L.UNCERTAIN]
    assert buf.labels is labels


def test_backproject_nearest_and_gate():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    labels = np.array([L.PERMANENT, L.SHORT_T], dtype=np.uint8)
    frame = PointCloud([[0.0, 0, 0], [0.95, 0, 0], [2.0, 0, 0], [0.5, 1.0, 0]])
    out = backproject_labels(pts, labels, [frame, frame], [Pose(), None])
    assert out[0].labels.tolist() == [L.PERMANENT, L.SHORT_T, L.UNCERTAIN, L.UNCERTAIN]
    assert np.all(out[1].labels == L.UNCERTAIN)
    shifted = backproject_labels(pts, labels, [PointCloud([[0.0, 0, 0]])], [Pose.from_xyz_yaw(1.0, 0, 0, 0)])
    assert shifted[0].labels.tolist() == [L.SHORT_T]


def test_build_buffer_empty_session_raises():
    with pytest.raises(PipelineStageError, match="buffer"):
        build_buffer([], cloud_map([[0.0, 0, 0]]))


# -- filtering and groundtruth labels ---------------------------------------------------------------


def test_filter_frame_counts():
    labels = np.array([L.SHORT_T] * 30 + [L.PERMANENT] * 40 + [L.LONG_T] * 10 + [L.UNCERTAIN] * 10 + [L.GROUND] * 10, np.uint8)
    f = PointCloud(np.zeros((100, 3)), labels=labels)
    assert len(filter_frame(f, "planning")) == 70
    loc = filter_frame(f, "localization")
    assert len(loc) == 50 and set(loc.labels.tolist()) == {L.GROUND, L.PERMANENT}
    perm = PointCloud(np.arange(12.0).reshape(4, 3), labels=np.full(4, L.PERMANENT, np.uint8))
    assert np.array_equal(filter_frame(perm, "localization").points, perm.points)
    with pytest.raises(InvalidParameterError):
        filter_frame(PointCloud(np.zeros((2, 3))), "planning")
    with pytest.raises(InvalidParameterError):
        filter_frame(f, "driving")


def test_groundtruth_labels_and_counts():
    f = PointCloud(np.zeros((7, 3)), gt_class=np.arange(7, dtype=np.uint8))
    lab = groundtruth_labels(f)
    assert lab.labels[GtClass.GROUND] == L.GROUND and lab.labels[GtClass.WALL] == L.PERMANENT
    assert lab.labels[GtClass.MOVING_PERSON] == L.SHORT_T and lab.labels[GtClass.TABLE] == L.LONG_T
    counts = label_counts([lab])
    assert sum(counts.values()) == 7 and counts["SHORT_T"] == 1


# -- whole session ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def empty_session(coarse_sensor):
    world = empty_room((8.0, 6.0))
    traj = [(Pose.from_xyz_yaw(2.0 + 0.25 * i, 3.0, 0.6, 0.1 * i), 0.5 * i) for i in range(14)]
    sess = simulate_session(world, coarse_sensor, traj)
    m = PointMap()
    for f, p in zip(sess.frames, sess.poses):
        map_update(m, prepare_frame(f, IcpConfig(), NormalParams()), p)
    return m, sess


def test_annotate_empty_room(empty_session):
    m, sess = empty_session
    out = annotate_session(m, sess.frames, init_pose=sess.poses[0])
    assert out.counts["LONG_T"] == 0
    assert sum(out.counts.values()) == sum(len(f) for f in sess.frames)
    assert set(np.unique(out.refined.labels).tolist()) <= {L.GROUND, L.PERMANENT}
    walls = np.concatenate([f.gt_class for f in sess.frames]) == GtClass.WALL
    labels = np.concatenate([f.labels for f in out.frames])
    assert (labels[walls] == L.PERMANENT).mean() > 0.95


def test_annotate_rejects_empty_inputs(empty_session):
    m, sess = empty_session
    with pytest.raises(PipelineStageError):
        annotate_session(m, [])
    with pytest.raises(PipelineStageError):
        annotate_session(PointMap(), sess.frames)
