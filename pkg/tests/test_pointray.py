import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidarannot.core import InvalidParameterError, PointCloud, Pose
from lidarannot.pointmap import PointMap, map_update
from lidarannot.pointray import (
    D_PHI,
    D_THETA,
    RayParams,
    build_frustum_grid,
    free_space_conditions,
    margin,
    mark_occupied,
    movable_probability,
    pointray_session,
    raytrace_free,
    write_probability_report,
)
from lidarannot.simworld import Furniture, WorldSpec, room_walls, simulate_session


def make_map(points, normals):
    m = PointMap()
    map_update(m, PointCloud(points, normals=normals, scores=np.ones(len(points))), Pose())
    return m


def wall_patch(rho=5.0, n_theta=5, n_phi=11):
    """Frame points on a sphere patch of radius rho centred on +x, one per frustum cell."""
    th = math.pi / 2 + D_THETA * (np.arange(n_theta) - n_theta // 2)
    ph = D_PHI * (np.arange(n_phi) - n_phi // 2)
    T, P = np.meshgrid(th, ph, indexing="ij")
    d = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    return PointCloud(rho * d)


@pytest.mark.parametrize(
    "rho0, expected",
    [(10.0, 0.11606439525762), (0.0, 0.0), (2.0, 0.02321287905152)],
)
def test_margin_values(rho0, expected):
    assert float(margin(rho0)) == pytest.approx(expected, rel=1e-9, abs=0.0)


@pytest.mark.parametrize("n, hits, expected", [(5, 5, 0.5), (20, 15, 0.75), (20, 0, 0.0), (10, 10, 0.5), (11, 11, 1.0)])
def test_movable_probability_values(n, hits, expected):
    assert float(movable_probability(n, hits)) == pytest.approx(expected, rel=1e-9, abs=0.0)


@given(st.integers(0, 1000), st.data())
def test_movable_probability_range(n, data):
    hits = data.draw(st.integers(0, n))
    p = float(movable_probability(n, hits))
    assert 0.0 <= p <= 1.0
    if n <= 10:
        assert p == 0.5


def test_ray_params_validation():
    with pytest.raises(InvalidParameterError):
        RayParams(alpha_max=math.pi / 2)
    with pytest.raises(InvalidParameterError):
        RayParams(n_min=0)


def test_frustum_single_point_and_minimum():
    g = build_frustum_grid(PointCloud([[3.0, 0, 0]]))
    assert g.cells.shape == (1, 1) and g.cells[0, 0] == 3.0
    g = build_frustum_grid(PointCloud([[2.0, 0, 0], [5.0, 0, 0], [0, 4.0, 0]]))
    assert np.nanmin(g.depth(np.array([math.pi / 2]), np.array([0.0]))) == 2.0
    assert np.isinf(g.cells).sum() == g.cells.size - 2


def test_frustum_cells_bound_frame_ranges(room_scan):
    _, frame = room_scan
    g = build_frustum_grid(frame)
    rho = np.linalg.norm(frame.points, axis=1)
    theta = np.arccos(frame.points[:, 2] / rho)
    phi = np.arctan2(frame.points[:, 1], frame.points[:, 0])
    depth = g.depth(theta, phi)
    assert np.all(depth <= rho)
    # one beam per cell: the stored depth is that beam's range
    assert np.allclose(depth, rho, rtol=0, atol=1e-12)


def test_empty_frame_grid():
    g = build_frustum_grid(PointCloud(np.zeros((0, 3))))
    assert np.isnan(g.depth(np.array([1.0]), np.array([0.0]))).all()


# -- occupied updates ---------------------------------------------------------


def test_occupied_exact_neighbor_and_once():
    up = [0, 0, 1]
    m = make_map([[0.015, 0.015, 0.015], [0.045, 0.015, 0.015], [0.105, 0.015, 0.015]], [up, up, up])
    mark_occupied(m, PointCloud([[0.015, 0.015, 0.015], [0.016, 0.016, 0.016]]), Pose())
    assert m.n_obs.tolist() == [1, 1, 0]
    assert m.movable_hits.tolist() == [0, 0, 0]


# -- free-space updates ---------------------------------------------------------


def test_free_space_conditions_examples():
    p = RayParams()
    # wall-like point 1 m in front of measured depth, facing the ray
    assert free_space_conditions(4.0, 5.0, 0.0, 0.0, p)
    # at the measured depth
    assert not free_space_conditions(5.0, 5.0, 0.0, 0.0, p)
    # grazing, horizontal normal
    assert not free_space_conditions(4.0, 5.0, 0.0, math.radians(80), p)
    # grazing table top
    assert free_space_conditions(4.0, 5.0, 1.0, math.radians(89), p)


def test_margin_scales_with_range():
    p = RayParams()
    assert free_space_conditions(2.0 - 0.05, 2.0, 0.0, 0.0, p)
    assert not free_space_conditions(10.0 - 0.05, 10.0, 0.0, 0.0, p)
    assert float(margin(10.0)) == pytest.approx(5 * float(margin(2.0)), rel=1e-12)


def test_raytrace_marks_point_in_front_of_wall():
    frame = wall_patch(5.0)
    m = make_map([[4.0, 0, 0], [5.0, 0, 0]], [[-1, 0, 0], [-1, 0, 0]])
    updated = mark_occupied(m, frame, Pose())
    raytrace_free(m, frame, Pose(), RayParams(), updated)
    assert m.n_obs.tolist() == [1, 1]
    assert m.movable_hits.tolist() == [1, 0]


def test_raytrace_grazing_horizontal_normal_not_free():
    frame = wall_patch(5.0)
    n = [-math.cos(math.radians(80)), math.sin(math.radians(80)), 0.0]
    m = make_map([[4.0, 0, 0]], [n])
    raytrace_free(m, frame, Pose(), RayParams(), mark_occupied(m, frame, Pose()))
    assert m.n_obs.tolist() == [0]


def test_raytrace_grazing_table_top_is_free():
    frame = wall_patch(5.0)
    m = make_map([[4.0, 0, 0]], [[0, 0, 1.0]])
    raytrace_free(m, frame, Pose(), RayParams(), mark_occupied(m, frame, Pose()))
    assert m.n_obs.tolist() == [1] and m.movable_hits.tolist() == [1]


def test_raytrace_respects_pose():
    pose = Pose.from_xyz_yaw(1.0, 2.0, 0.5, math.pi / 2)
    frame = wall_patch(5.0)
    world_pt = pose.apply(np.array([[4.0, 0, 0]]))
    m = make_map(world_pt, pose.rotate(np.array([[-1.0, 0, 0]])))
    raytrace_free(m, frame, pose, RayParams(), mark_occupied(m, frame, pose))
    assert m.movable_hits.tolist() == [1]


# -- sessions ----------------------------------------------------------------------


def test_zero_frames_gives_prior(room_map):
    m = room_map.copy()
    m.reset_counters()
    rep = pointray_session(m, [], [])
    assert np.all(rep.p_mov == 0.5)


def test_invalid_poses_are_skipped(room_scan, room_map):
    pose, frame = room_scan
    m = room_map.copy()
    m.reset_counters()
    rep = pointray_session(m, [frame, frame], [None, pose])
    assert rep.frames_used == 1 and rep.frames_skipped == 1
    assert m.n_obs.max() == 1


def test_per_frame_single_update_and_counter_invariant(room_scan, room_map):
    pose, frame = room_scan
    m = room_map.copy()
    m.reset_counters()
    for k in range(1, 4):
        pointray_session(m, [frame], [pose])
        assert m.n_obs.max() <= k
    assert np.all((0 <= m.movable_hits) & (m.movable_hits <= m.n_obs))


def test_vanishing_box_becomes_movable(coarse_sensor):
    box = Furniture("box", 4.0, 4.5, t_end=12.25)
    world = WorldSpec(bounds=(0.0, 0.0, 12.0, 9.0), walls=room_walls(), furniture=(box,))
    pose = Pose.from_xyz_yaw(1.5, 4.5, 0.6, 0.0)
    sess = simulate_session(world, coarse_sensor, [(pose, 0.5 * i) for i in range(50)])
    from lidarannot.pointmap import IcpConfig, NormalParams, prepare_frame

    m = PointMap()
    map_update(m, prepare_frame(sess.frames[0], IcpConfig(), NormalParams()), pose)
    # frustum columns as wide as the (coarse) azimuth step, as for the real sensor
    rep = pointray_session(m, sess.frames, sess.poses, RayParams(d_phi=coarse_sensor.azimuth_step))
    in_box = (np.abs(m.positions[:, 0] - 4.0) < 0.31) & (np.abs(m.positions[:, 1] - 4.5) < 0.31) & (m.positions[:, 2] > 0.1)
    facing = in_box & (m.normals[:, 0] < -0.9)
    assert facing.sum() > 20
    assert np.all(rep.p_mov[facing] >= 0.4)
    # edge points carry sideways normals: the incidence gate blocks their free updates
    edge = in_box & ~facing
    assert np.all(m.movable_hits[edge] <= m.movable_hits[facing].max())


def test_probability_report_format(tmp_path):
    m = make_map([[0.015, 0.015, 0.015]], [[0, 0, 1]])
    m.n_obs[:] = 20
    m.movable_hits[:] = 15
    write_probability_report(m, movable_probability(m.n_obs, m.movable_hits), tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "voxel_i,voxel_j,voxel_k,x,y,z,n_obs,movable_hits,p_mov"
    assert lines[1].startswith("0,0,0,") and lines[1].endswith(",20,15,0.75")
