import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarannot.core import InvalidParameterError, PointCloud, Pose, pose_difference, vox
from lidarannot.pointmap import (
    IcpConfig,
    NormalParams,
    PointMap,
    compute_normals_spherical,
    icp_align,
    map_update,
    normal_score,
    pointmap_slam,
    prepare_frame,
    read_map,
    write_map,
)


def wall_frame(distance=2.0, n_el=9, n_az=21):
    """Scan-line sampled plane x = distance seen from the origin."""
    el = np.deg2rad(1.33) * (np.arange(n_el) - n_el // 2)
    az = np.deg2rad(0.2) * (np.arange(n_az) - n_az // 2)
    A, E = np.meshgrid(az, el, indexing="ij")
    d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
    return PointCloud(d * (distance / d[:, :1]))


def one_point_frame(p, n=(0.0, 0.0, 1.0), score=1.0):
    return PointCloud([p], normals=[n], scores=[score])


# -- normal score ------------------------------------------------------------


@pytest.mark.parametrize(
    "alpha, R, expected",
    [
        (0.0, 2.0, 2.0),
        (math.pi / 2, 5.0, 0.0),
        (math.radians(80), 2.0, 10 / 15),
        (0.3, 3.0, 1 + math.exp(-1.0)),
        (5 * math.pi / 12, 2.5, 1 + math.exp(-0.25)),  # boundary belongs to the facing branch
    ],
)
def test_normal_score_formula(alpha, R, expected):
    assert float(normal_score(alpha, R)) == pytest.approx(expected, rel=1e-9, abs=1e-15)


@given(st.floats(0, math.pi / 2), st.floats(0.01, 50))
def test_normal_score_range(alpha, R):
    s = float(normal_score(alpha, R))
    assert 0.0 <= s <= 2.0


# -- normals -------------------------------------------------------------------


def test_wall_normal_faces_sensor_with_top_score():
    frame = wall_frame()
    out = compute_normals_spherical(frame)
    centre = np.flatnonzero(np.all(np.isclose(frame.points, [2.0, 0.0, 0.0]), axis=1))[0]
    assert out.normals[centre] == pytest.approx([-1.0, 0.0, 0.0], abs=1e-9)
    assert out.scores[centre] == pytest.approx(2.0, rel=1e-9)


def test_normals_oriented_toward_sensor(room_scan):
    _, frame = room_scan
    out = compute_normals_spherical(frame)
    ok = np.linalg.norm(out.normals, axis=1) > 0
    assert ok.mean() > 0.9
    assert np.all(np.einsum("ij,ij->i", out.normals[ok], -frame.points[ok]) >= 0)
    assert np.allclose(np.linalg.norm(out.normals[ok], axis=1), 1.0, atol=1e-9)
    assert np.all((out.scores >= 0) & (out.scores <= 2))
    assert np.all(out.scores[~ok] == 0)


def test_isolated_points_get_invalid_normals():
    frame = PointCloud([[5.0, 0, 0], [0, 5.0, 0], [0, 0, 5.0]])
    out = compute_normals_spherical(frame)
    assert np.all(out.normals == 0) and np.all(out.scores == 0)


def test_normal_params_validation():
    with pytest.raises(InvalidParameterError):
        NormalParams(theta_0=math.pi / 2)
    with pytest.raises(InvalidParameterError):
        NormalParams(R_0=0.0)
    with pytest.raises(InvalidParameterError):
        IcpConfig(n_samples=0)


# -- map update ------------------------------------------------------------------


def test_map_update_insert_exact_position():
    m = PointMap()
    map_update(m, one_point_frame([0.5, 0.25, 1.0]), Pose())
    assert len(m) == 1
    assert m.positions[0].tolist() == [0.5, 0.25, 1.0]
    assert vox([0.5, 0.25, 1.0]) in m


def test_map_update_lower_score_keeps_everything():
    m = PointMap()
    map_update(m, one_point_frame([0.5, 0.25, 1.0], (0, 0, 1), 1.5), Pose())
    stats = map_update(m, one_point_frame([0.51, 0.26, 1.01], (1, 0, 0), 0.8), Pose())
    p = m[vox([0.5, 0.25, 1.0])]
    assert p.position.tolist() == [0.5, 0.25, 1.0]
    assert p.normal.tolist() == [0, 0, 1] and p.score == 1.5
    assert stats.unchanged == 1


def test_map_update_higher_score_replaces_normal_only():
    m = PointMap()
    map_update(m, one_point_frame([0.5, 0.25, 1.0], (0, 0, 1), 0.8), Pose())
    map_update(m, one_point_frame([0.51, 0.26, 1.01], (1, 0, 0), 1.5), Pose())
    p = m[vox([0.5, 0.25, 1.0])]
    assert p.position.tolist() == [0.5, 0.25, 1.0]
    assert p.normal.tolist() == [1, 0, 0] and p.score == 1.5


def test_map_update_skips_invalid_normals():
    m = PointMap()
    stats = map_update(m, PointCloud([[1.0, 0, 0], [2.0, 0, 0]], normals=[[0, 0, 0], [0, 0, 1]], scores=[0, 1]), Pose())
    assert len(m) == 1 and stats.skipped_invalid == 1


def test_map_invariants(room_map):
    m = room_map
    keys = m.voxel_keys(m.positions)
    assert np.array_equal(keys, m.keys)
    assert len(np.unique(m.keys)) == len(m)
    assert np.all((m.scores >= 0) & (m.scores <= 2))
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-3, 3)] * 3), min_size=1, max_size=40), st.integers(0, 2**31))
def test_map_growth_is_monotone_and_first_point_stable(raw, seed):
    rng = np.random.default_rng(seed)
    pts = np.array(raw)
    n = rng.normal(size=pts.shape)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-9)
    cloud = PointCloud(pts, normals=n, scores=rng.uniform(0.1, 2, len(pts)))
    m = PointMap()
    map_update(m, cloud, Pose())
    before_pos, before_len = m.positions.copy(), len(m)
    map_update(m, cloud.with_channels(scores=rng.uniform(0.1, 2, len(pts))), Pose())
    assert len(m) == before_len
    assert np.array_equal(m.positions, before_pos)


# -- ICP ---------------------------------------------------------------------------


def test_icp_aligned_frame_stays_put(room_map):
    rng = np.random.default_rng(5)
    frame = PointCloud(room_map.positions[rng.choice(len(room_map), 600, replace=False)])
    res = icp_align(frame, room_map, Pose(), IcpConfig(subsample_dl=1e-3), rng_seed=3)
    t, r = pose_difference(res.pose, Pose())
    assert res.converged and res.iterations <= 3
    assert t < 1e-4 and r < 1e-4


def test_icp_recovers_known_displacement(room_scan, room_map):
    pose, frame = room_scan
    offset = Pose.from_rotvec([0.0, 0.0, 0.1], [0.3 / math.sqrt(2), 0.3 / math.sqrt(2), 0.0])
    res = icp_align(frame, room_map, offset @ pose, rng_seed=1)
    t, r = pose_difference(res.pose, pose)
    assert t < 0.02 and r < math.radians(0.5)


def test_icp_noise_far_from_map_fails(room_map):
    rng = np.random.default_rng(0)
    noise = PointCloud(rng.uniform(-1, 1, size=(500, 3)) + [100.0, 100.0, 0.0])
    res = icp_align(noise, room_map, Pose(), rng_seed=0)
    assert res.failed and not res.converged


def test_icp_rejects_empty_inputs(room_scan):
    with pytest.raises(InvalidParameterError):
        icp_align(room_scan[1], PointMap(), Pose())


def test_icp_deterministic(room_scan, room_map):
    pose, frame = room_scan
    init = Pose.from_xyz_yaw(0.2, -0.1, 0.0, 0.05) @ pose
    a = icp_align(frame, room_map, init, rng_seed=11)
    b = icp_align(frame, room_map, init, rng_seed=11)
    assert np.array_equal(a.pose.as_matrix(), b.pose.as_matrix())
    assert a.iterations == b.iterations and a.final_rms_plane_dist == b.final_rms_plane_dist


# -- SLAM ------------------------------------------------------------------------------


def test_slam_single_frame_seeds_map(room_scan):
    _, frame = room_scan
    res = pointmap_slam([frame])
    assert res.trajectory == [Pose()]
    expected = PointMap()
    map_update(expected, prepare_frame(frame, IcpConfig(), NormalParams()), Pose())
    assert np.array_equal(res.map.positions, expected.positions)


def test_slam_static_frames_stay_near_identity(room_scan):
    _, frame = room_scan
    res = pointmap_slam([frame] * 10)
    assert res.n_failed == 0
    for p in res.trajectory:
        assert np.linalg.norm(p.translation) < 1e-3


def test_slam_deterministic(easy_world, coarse_sensor):
    from lidarannot.simworld import simulate_session, tour

    sess = simulate_session(easy_world, coarse_sensor, tour("B")[:12])
    a = pointmap_slam(sess.frames, seed=4, init_pose=sess.poses[0])
    b = pointmap_slam(sess.frames, seed=4, init_pose=sess.poses[0])
    assert np.array_equal(a.map.positions, b.map.positions)
    assert all(np.array_equal(p.as_matrix(), q.as_matrix()) for p, q in zip(a.trajectory, b.trajectory))
    assert max(pose_difference(p, q)[0] for p, q in zip(a.trajectory, sess.poses)) < 0.05


def test_slam_localization_only_keeps_map(room_scan, room_map):
    pose, frame = room_scan
    res = pointmap_slam([frame], room_map, init_pose=pose, update_map=False)
    assert len(res.map) == len(room_map)
    assert pose_difference(res.trajectory[0], pose)[0] < 0.01


def test_map_file_round_trip(tmp_path, room_map):
    m = room_map.copy()
    m.n_obs[:] = np.arange(len(m)) % 17
    m.movable_hits[:] = m.n_obs // 2
    write_map(m, tmp_path / "m.ply")
    back = read_map(tmp_path / "m.ply")
    assert np.array_equal(back.positions, m.positions)
    assert np.array_equal(back.keys, m.keys)
    assert np.array_equal(back.n_obs, m.n_obs) and np.array_equal(back.movable_hits, m.movable_hits)
    assert np.allclose(back.normals, m.normals, atol=1e-6)
