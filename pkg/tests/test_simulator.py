import numpy as np
import pytest

from trajforge.geometry import Trajectory
from trajforge.io import trajectory_to_dict
from trajforge.simulator import (MODERATE, NOISELESS, PROFILES, DetectorProfile, SceneConfig, detect,
                                 detection_seed, generate_scene, generate_scenes, scene_seed)

from conftest import cv_traj


def test_determinism():
    cfg = SceneConfig(seed=1)
    a = [trajectory_to_dict(t) for t in generate_scene(cfg)]
    b = [trajectory_to_dict(t) for t in generate_scene(cfg)]
    assert a == b


def test_constant_velocity_mix_has_zero_acceleration():
    cfg = SceneConfig(seed=3, motion_mix={"constant_velocity": 1.0})
    for tr in generate_scene(cfg):
        assert np.max(np.abs(np.diff(tr.xy, n=2, axis=0))) <= 1e-9


def test_state_count_and_roi():
    cfg = SceneConfig(seed=5)
    trajs = generate_scene(cfg)
    assert trajs
    for tr in trajs:
        assert len(tr) == 201
        assert np.all(np.abs(tr.xy) <= cfg.roi)


@pytest.mark.parametrize("model", ["constant_velocity", "constant_turn", "stop_and_go", "lane_change"])
def test_yaw_follows_velocity(model):
    cfg = SceneConfig(seed=11, motion_mix={model: 1.0})
    for tr in generate_scene(cfg):
        d = np.diff(tr.xy, axis=0)
        moving = np.linalg.norm(d, axis=1) > 1e-3
        y0, y1 = tr.data[:-1, 3], tr.data[1:, 3]
        mid = y0 + 0.5 * np.angle(np.exp(1j * (y1 - y0)))
        ang = np.arctan2(d[:, 1], d[:, 0])
        err = np.angle(np.exp(1j * (ang - mid)))[moving]
        assert np.max(np.abs(err)) < 0.05


def test_min_separation_respected():
    cfg = SceneConfig(seed=2, n_agents=(10, 10))
    trajs = generate_scene(cfg)
    for i in range(len(trajs)):
        for j in range(i):
            assert np.min(np.linalg.norm(trajs[i].xy - trajs[j].xy, axis=1)) >= cfg.min_separation


@pytest.mark.parametrize("kwargs", [
    {"n_agents": (5, 3)},
    {"motion_mix": {"constant_velocity": 0.5}},
    {"motion_mix": {"teleport": 1.0}},
    {"duration": 1.05},
])
def test_config_errors(kwargs):
    with pytest.raises(ValueError):
        SceneConfig(**kwargs)


def test_scene_batches_are_independent_of_start():
    cfg = SceneConfig(seed=9)
    all4 = generate_scenes(cfg, 4)
    tail = generate_scenes(cfg, 2, start=2)
    assert [trajectory_to_dict(t) for t in all4[2]] == [trajectory_to_dict(t) for t in tail[0]]
    assert scene_seed(9, 2) != scene_seed(9, 3)
    assert detection_seed(1, "noisy") != detection_seed(1, "moderate")


class TestDetect:
    def test_noiseless_identity(self):
        gt = generate_scene(SceneConfig(seed=4))
        frames = detect(gt, NOISELESS, seed=0)
        assert len(frames) == 201
        for f in frames:
            assert len(f.boxes) == len(gt)
            for tr, b in zip(gt, f.boxes):
                i = int(round(f.t * 10))
                assert (b.cx, b.cy, b.cz, b.length, b.width, b.height) == tuple(tr.data[i, [0, 1, 2, 4, 5, 6]])
                assert b.yaw == pytest.approx(tr.data[i, 3], abs=1e-15)
                assert b.score == NOISELESS.tp_mean

    def test_all_missed(self):
        gt = generate_scene(SceneConfig(seed=4))
        prof = DetectorProfile("blind", miss_base=1.0, fp_rate=2.0, fp_mean=0.123, fp_sigma=0.0)
        frames = detect(gt, prof, seed=1)
        assert sum(len(f.boxes) for f in frames) > 0
        assert all(b.score == 0.123 for f in frames for b in f.boxes)

    def test_position_noise_std(self):
        gt = [cv_traj(201, v=(0.0, 0.0), track_id=f"a{i}", start=(i * 0.0, 0.0)) for i in range(50)]
        prof = DetectorProfile("n", pos_sigma=0.3, miss_base=0.0, miss_range_coeff=0.0, fp_rate=0.0)
        frames = detect(gt, prof, seed=7)
        err = np.array([b.cx for f in frames for b in f.boxes])
        assert len(err) == 10050
        assert 0.29 <= err.std() <= 0.31

    def test_false_positive_count_poisson(self):
        gt = [cv_traj(201)]
        prof = DetectorProfile("fp", miss_base=1.0, fp_rate=3.0)
        frames = detect(gt, prof, seed=3)
        n = sum(len(f.boxes) for f in frames)
        N = len(frames)
        assert abs(n - N * 3.0) <= 5 * np.sqrt(N * 3.0)

    def test_two_hz(self):
        gt = generate_scene(SceneConfig(seed=4))
        frames = detect(gt, PROFILES["sparse"], seed=0)
        assert len(frames) == 41
        assert np.allclose(np.diff([f.t for f in frames]), 0.5)

    def test_deterministic(self):
        gt = generate_scene(SceneConfig(seed=4))
        a = detect(gt, MODERATE, seed=5)
        b = detect(gt, MODERATE, seed=5)
        assert [[x for x in f.boxes] for f in a] == [[x for x in f.boxes] for f in b]

    def test_scores_clamped(self):
        gt = generate_scene(SceneConfig(seed=4))
        prof = DetectorProfile("wide", tp_sigma=5.0, fp_sigma=5.0)
        for f in detect(gt, prof, seed=2):
            assert all(0.0 <= b.score <= 1.0 for b in f.boxes)

    @pytest.mark.parametrize("kwargs", [{"pos_sigma": -1}, {"miss_base": 1.5}, {"detect_hz": 5}])
    def test_profile_validation(self, kwargs):
        with pytest.raises(ValueError):
            DetectorProfile(**kwargs)
