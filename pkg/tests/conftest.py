import numpy as np
import pytest

from trajforge.geometry import Trajectory


def make_traj(xy, t=None, yaw=None, scene_id="s", track_id="a", hz=10.0, provenance="gt", score=None):
    """Trajectory from (N, 2) positions with unit-ish box dims."""
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    if t is None:
        t = np.arange(n) / hz
    if yaw is None:
        d = np.diff(xy, axis=0)
        # direction of arrival at each point
        yaw = np.concatenate([[0.0], np.arctan2(d[:, 1], d[:, 0])]) if n > 1 else np.zeros(1)
        if n > 1:
            yaw[0] = yaw[1]
    data = np.zeros((n, 7))
    data[:, :2] = xy
    data[:, 2] = 0.8
    data[:, 3] = yaw
    data[:, 4:] = (4.5, 1.9, 1.6)
    return Trajectory(scene_id, track_id, t, data, 0, provenance, score)


def cv_traj(n=81, v=(1.0, 0.0), start=(0.0, 0.0), **kw):
    t = np.arange(n) / 10.0
    xy = np.asarray(start) + t[:, None] * np.asarray(v)
    return make_traj(xy, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in VERDICTS:
            terminalreporter.write_line(line)
