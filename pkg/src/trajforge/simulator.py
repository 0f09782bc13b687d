"""Synthetic driving scenes and simulated single-frame 3D detectors.

Scenes are sets of ground-truth vehicle trajectories drawn from four motion
models. Detectors turn ground truth into noisy per-frame box sets according to
a :class:`DetectorProfile`.

Seed mixing: scene ``i`` of a batch generated from base seed ``s`` is seeded
with ``scene_seed(s, i)``, the first 63 bits of ``SeedSequence([s, i])``.
Detecting a scene whose seed is ``q`` with a profile uses
``detection_seed(q, profile_id)``, built the same way from
``SeedSequence([q, crc32(profile_id)])``.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import VEHICLE, Box3D, Trajectory, wrap_angle

_MAX_PLACEMENT_TRIES = 100
MOTION_MODELS = ("constant_velocity", "constant_turn", "stop_and_go", "lane_change")


@dataclass(frozen=True)
class SceneConfig:
    """Parameters of one synthetic scene.

    Attributes:
        duration: Scene length in seconds.
        frame_hz: Ground-truth sampling rate.
        n_agents: Inclusive (low, high) range of agent counts.
        roi: Half-extent in meters of the square region agents stay inside.
        motion_mix: Probability per motion model, keyed by ``MOTION_MODELS``.
        speed_range: Cruise speed range in m/s.
        min_separation: Minimum simultaneous center distance between agents;
            placements that violate it are redrawn, agents that cannot be
            placed are dropped.
        seed: Base random seed.
        scene_id: Identifier; defaults to ``scene-<seed>``.
    """

    duration: float = 20.0
    frame_hz: float = 10.0
    n_agents: tuple = (4, 10)
    roi: float = 60.0
    motion_mix: dict = field(default_factory=lambda: {
        "constant_velocity": 0.25, "constant_turn": 0.25, "stop_and_go": 0.25, "lane_change": 0.25})
    speed_range: tuple = (2.0, 12.0)
    min_separation: float = 6.0
    seed: int = 0
    scene_id: str = ""

    def __post_init__(self):
        weights = [self.motion_mix.get(m, 0.0) for m in MOTION_MODELS]
        unknown = set(self.motion_mix) - set(MOTION_MODELS)
        if unknown:
            raise ValueError(f"unknown motion models: {sorted(unknown)}")
        if min(weights) < 0 or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
            raise ValueError("motion_mix weights must be non-negative and sum to 1")
        steps = self.duration * self.frame_hz
        if abs(steps - round(steps)) > 1e-9 or steps < 1:
            raise ValueError("duration * frame_hz must be a positive integer")
        lo, hi = self.n_agents
        if lo > hi or hi < 1 or lo < 0:
            raise ValueError(f"empty agent count range {self.n_agents}")
        if self.roi <= 0:
            raise ValueError("roi must be positive")
        if not 0 <= self.speed_range[0] <= self.speed_range[1]:
            raise ValueError("invalid speed range")

    @property
    def name(self) -> str:
        return self.scene_id or f"scene-{self.seed}"


@dataclass(frozen=True)
class DetectorProfile:
    """Noise, miss and false-positive model of a simulated detector."""

    profile_id: str = "moderate"
    pos_sigma: float = 0.15
    dim_sigma: float = 0.1
    yaw_sigma: float = 0.05
    miss_base: float = 0.05
    miss_range_coeff: float = 0.001
    fp_rate: float = 0.5
    tp_mean: float = 0.75
    tp_sigma: float = 0.15
    fp_mean: float = 0.3
    fp_sigma: float = 0.15
    detect_hz: float = 10.0

    def __post_init__(self):
        for name in ("pos_sigma", "dim_sigma", "yaw_sigma", "tp_sigma", "fp_sigma", "fp_rate", "miss_range_coeff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("miss_base", "tp_mean", "fp_mean"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.detect_hz not in (2, 10):
            raise ValueError(f"detect_hz must be 2 or 10, got {self.detect_hz}")


NOISELESS = DetectorProfile("noiseless", 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 0.0, 0.3, 0.0, 10.0)
MODERATE = DetectorProfile()
# Lower localization noise but slower and lossier: the 2 Hz path.
SPARSE = DetectorProfile("sparse", pos_sigma=0.1, dim_sigma=0.08, yaw_sigma=0.04, miss_base=0.08,
                         miss_range_coeff=0.0015, fp_rate=0.3, tp_mean=0.7, detect_hz=2.0)
NOISY = DetectorProfile("noisy", pos_sigma=0.3, dim_sigma=0.2, yaw_sigma=0.1, miss_base=0.1,
                        miss_range_coeff=0.002, fp_rate=1.0, tp_mean=0.65, tp_sigma=0.2)
PROFILES = {p.profile_id: p for p in (NOISELESS, MODERATE, SPARSE, NOISY)}


@dataclass
class DetectionFrame:
    scene_id: str
    t: float
    boxes: list = field(default_factory=list)


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _motion(model: str, t: np.ndarray, rng: np.random.Generator, speed_range) -> tuple[np.ndarray, np.ndarray]:
    """Positions (N, 2) and headings (N,) in a local frame starting at the origin facing +x."""
    v = rng.uniform(*speed_range)
    if model == "constant_velocity":
        xy = np.stack([v * t, np.zeros_like(t)], axis=1)
        return xy, np.zeros_like(t)
    if model == "constant_turn":
        omega = rng.uniform(0.05, 0.25) * rng.choice([-1.0, 1.0])
        heading = omega * t
        xy = np.stack([v / omega * np.sin(heading), v / omega * (1.0 - np.cos(heading))], axis=1)
        return xy, heading
    if model == "stop_and_go":
        # cruise, brake over a smoothstep ramp, hold, accelerate back
        ramp = rng.uniform(2.0, 4.0)
        t_brake = rng.uniform(0.1, 0.5) * t[-1]
        hold = rng.uniform(1.0, 4.0)
        t_go = t_brake + ramp + hold
        # distance integrates the smoothstep ramp exactly: u^3 - u^4/2 on [0, 1], u - 1/2 beyond
        def ramp_integral(u):
            uc = np.clip(u, 0.0, 1.0)
            return np.where(u < 1.0, uc ** 3 - 0.5 * uc ** 4, u - 0.5) * ramp
        dist = v * (t - ramp_integral((t - t_brake) / ramp) + ramp_integral((t - t_go) / ramp))
        dist = np.where(t > 0, dist, 0.0)
        xy = np.stack([dist, np.zeros_like(t)], axis=1)
        return xy, np.zeros_like(t)
    if model == "lane_change":
        width = rng.uniform(2.5, 4.0) * rng.choice([-1.0, 1.0])
        span = rng.uniform(3.0, 6.0)
        t0 = rng.uniform(0.0, max(t[-1] - span, 0.0))
        u = (t - t0) / span
        lat = width * _smoothstep(u)
        dlat = np.where((u > 0) & (u < 1), width * 6.0 * u * (1.0 - u) / span, 0.0)
        xy = np.stack([v * t, lat], axis=1)
        return xy, np.arctan2(dlat, v)
    raise ValueError(f"unknown motion model {model!r}")


def _place(xy: np.ndarray, heading: np.ndarray, roi: float, rng: np.random.Generator):
    rot = rng.uniform(-np.pi, np.pi)
    c, s = np.cos(rot), np.sin(rot)
    xy = xy @ np.array([[c, s], [-s, c]])
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    margin = 3.0
    if np.any(hi - lo > 2 * (roi - margin)):
        return None
    offset = rng.uniform(-roi + margin - lo, roi - margin - hi)
    return xy + offset, wrap_angle(heading + rot)


def generate_scene(cfg: SceneConfig) -> list[Trajectory]:
    """Sample ground-truth agent trajectories for one scene.

    Every agent spans the whole scene at ``frame_hz`` and stays inside the ROI.
    Yaw follows the velocity direction; stationary stretches keep the previous heading.
    """
    rng = np.random.default_rng(cfg.seed)
    n_steps = int(round(cfg.duration * cfg.frame_hz))
    t = np.arange(n_steps + 1) / cfg.frame_hz
    probs = np.array([cfg.motion_mix.get(m, 0.0) for m in MOTION_MODELS])
    n_agents = int(rng.integers(cfg.n_agents[0], cfg.n_agents[1] + 1))
    trajs = []
    placed_xy: list[np.ndarray] = []
    for i in range(n_agents):
        model = MOTION_MODELS[int(rng.choice(len(MOTION_MODELS), p=probs))]
        speed_range = cfg.speed_range
        placed = None
        for _ in range(_MAX_PLACEMENT_TRIES):
            xy, heading = _motion(model, t, rng, speed_range)
            placed = _place(xy, heading, cfg.roi, rng)
            if placed is None:
                speed_range = (speed_range[0] * 0.8, speed_range[1] * 0.8)
                continue
            if all(np.min(np.linalg.norm(placed[0] - other, axis=1)) >= cfg.min_separation for other in placed_xy):
                break
            placed = None
        if placed is None:
            continue
        xy, heading = placed
        placed_xy.append(xy)
        length = float(np.clip(rng.normal(4.6, 0.5), 3.5, 6.0))
        width = float(np.clip(rng.normal(1.9, 0.15), 1.6, 2.3))
        height = float(np.clip(rng.normal(1.6, 0.2), 1.3, 2.2))
        data = np.empty((len(t), 7))
        data[:, :2] = xy
        data[:, 2] = 0.5 * height
        data[:, 3] = heading
        data[:, 4:] = (length, width, height)
        trajs.append(Trajectory(cfg.name, f"{cfg.name}-gt{len(trajs)}", t.copy(), data, VEHICLE))
    return trajs


def scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def generate_scenes(cfg: SceneConfig, n_scenes: int, start: int = 0) -> list[list[Trajectory]]:
    """Scenes ``start .. start+n_scenes-1`` with seeds derived from ``cfg.seed``."""
    out = []
    for i in range(start, start + n_scenes):
        sub = replace(cfg, seed=scene_seed(cfg.seed, i), scene_id=f"{cfg.name}-{i:05d}")
        out.append(generate_scene(sub))
    return out


def detection_seed(base_seed: int, profile_id: str) -> int:
    mixed = np.random.SeedSequence([base_seed & (2 ** 63 - 1), zlib.crc32(profile_id.encode())])
    return int(mixed.generate_state(1, dtype=np.uint64)[0] >> 1)


def detect(gt: Sequence[Trajectory], profile: DetectorProfile, seed: int, roi: float = 60.0) -> list[DetectionFrame]:
    """Simulate a detector on ground truth.

    At each timestamp that is a multiple of ``1/detect_hz``, every visible GT box
    is dropped with probability ``min(1, miss_base + miss_range_coeff * range)``;
    survivors receive Gaussian noise. ``Poisson(fp_rate)`` false positives are
    placed uniformly in the ROI. Frames are returned sorted by time.
    """
    rng = np.random.default_rng(seed)
    scene_id = gt[0].scene_id if gt else ""
    by_time: dict[float, list] = {}
    for traj in gt:
        for i, ti in enumerate(traj.t):
            k = ti * profile.detect_hz
            if abs(k - round(k)) < 1e-6:
                by_time.setdefault(round(float(ti), 9), []).append((traj, i))
    frames = []
    for ti in sorted(by_time):
        boxes = []
        for traj, i in by_time[ti]:
            cx, cy, cz, yaw, l, w, h = traj.data[i]
            p_miss = min(1.0, profile.miss_base + profile.miss_range_coeff * math.hypot(cx, cy))
            noise = rng.standard_normal(7)
            score_draw = rng.standard_normal()
            if rng.random() < p_miss:
                continue
            ps, ds = profile.pos_sigma, profile.dim_sigma
            boxes.append(Box3D(
                cx + ps * noise[0], cy + ps * noise[1], cz + ps * noise[2],
                max(0.1, l + ds * noise[3]), max(0.1, w + ds * noise[4]), max(0.1, h + ds * noise[5]),
                yaw + profile.yaw_sigma * noise[6],
                float(np.clip(profile.tp_mean + profile.tp_sigma * score_draw, 0.0, 1.0)),
                traj.class_id, ti,
            ))
        for _ in range(int(rng.poisson(profile.fp_rate))):
            x, y = rng.uniform(-roi, roi, size=2)
            l, w, h = rng.uniform(3.5, 6.0), rng.uniform(1.6, 2.3), rng.uniform(1.3, 2.2)
            score = float(np.clip(rng.normal(profile.fp_mean, profile.fp_sigma), 0.0, 1.0))
            boxes.append(Box3D(x, y, 0.5 * h, l, w, h, rng.uniform(-np.pi, np.pi), score, VEHICLE, ti))
        frames.append(DetectionFrame(scene_id, ti, boxes))
    return frames
