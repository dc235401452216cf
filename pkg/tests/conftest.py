import numpy as np
import pytest

from lidarannot.core import Pose
from lidarannot.pointmap import IcpConfig, NormalParams, PointMap, map_update, prepare_frame
from lidarannot.simworld import SensorModel, scenario_presets, simulate_frame


@pytest.fixture(scope="session")
def coarse_sensor():
    # 0.5 deg azimuth keeps unit tests fast; beams as the real sensor
    return SensorModel(azimuth_step=np.deg2rad(0.5))


@pytest.fixture(scope="session")
def easy_world():
    return scenario_presets("easy", 1)


@pytest.fixture(scope="session")
def room_scan(easy_world, coarse_sensor):
    pose = Pose.from_xyz_yaw(2.5, 4.5, 0.6, 0.3)
    return pose, simulate_frame(easy_world, coarse_sensor, pose, 0.0)


@pytest.fixture(scope="session")
def room_map(easy_world, coarse_sensor, room_scan):
    """Map from a few scans taken around the first one, at groundtruth poses."""
    m = PointMap()
    cfg, params = IcpConfig(), NormalParams()
    pose0, frame0 = room_scan
    map_update(m, prepare_frame(frame0, cfg, params), pose0)
    for dx, dy, yaw in ((1.0, 0.0, 0.0), (0.0, 1.5, 1.0), (2.0, -1.0, -0.5)):
        pose = Pose.from_xyz_yaw(2.5 + dx, 4.5 + dy, 0.6, yaw)
        frame = simulate_frame(easy_world, coarse_sensor, pose, 0.0)
        map_update(m, prepare_frame(frame, cfg, params), pose)
    return m


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
