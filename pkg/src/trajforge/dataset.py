"""Forecasting samples from trajectory sets: windowing, merging and labeled fractions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .geometry import VEHICLE, YAW, Trajectory, is_uniform

SAMPLE_HZ = 10.0
_SLOW_SPEED = 0.1  # m/s over the last 0.5 s; below this the yaw field sets the heading
HEADING_SOURCES = ("yaw", "displacement")


@dataclass(frozen=True)
class WindowConfig:
    """Window lengths in frames at 10 Hz: ``past_len`` history steps, ``future_len`` forecast steps."""

    past_len: int = 20
    future_len: int = 60
    stride: int = 5
    allowed_classes: frozenset = frozenset({VEHICLE})
    heading_source: str = "yaw"

    def __post_init__(self):
        if self.past_len < 1 or self.future_len < 1 or self.stride < 1:
            raise ValueError("past_len, future_len and stride must all be >= 1")
        if self.heading_source not in HEADING_SOURCES:
            raise ValueError(f"heading_source must be one of {HEADING_SOURCES}")
        object.__setattr__(self, "allowed_classes", frozenset(self.allowed_classes))

    @property
    def span(self) -> int:
        return self.past_len + self.future_len + 1


@dataclass
class ForecastSample:
    """One agent-centric training/evaluation unit.

    ``past`` is (L+1, 2) with the current position at ``past[L] == (0, 0)``;
    ``future`` is (M, 2). ``origin`` and ``heading`` map back to world
    coordinates via :meth:`to_world`.
    """

    sample_id: str
    scene_id: str
    track_id: str
    anchor_t: float
    past: np.ndarray
    future: np.ndarray
    origin: np.ndarray
    heading: float
    provenance: str

    def to_world(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.asarray(xy) @ np.array([[c, s], [-s, c]]) + self.origin


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")


def _heading(xy: np.ndarray, yaw: float, anchor: int, source: str = "yaw") -> float:
    if source == "yaw":
        return float(yaw)
    lookback = min(5, anchor)
    speed = np.linalg.norm(xy[anchor] - xy[anchor - lookback]) / (lookback / SAMPLE_HZ) if lookback else 0.0
    last = xy[anchor] - xy[anchor - 1] if anchor else np.zeros(2)
    if speed < _SLOW_SPEED or not np.any(last):
        return float(yaw)
    return math.atan2(last[1], last[0])


def _to_local(xy: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    return (xy - origin) @ np.array([[c, -s], [s, c]])


def agent_frame(traj: Trajectory, anchor: int, past_len: int, heading_source: str = "yaw"):
    """Agent-centric past (L+1, 2) at index ``anchor`` plus its origin and heading."""
    xy = traj.xy
    origin = xy[anchor].copy()
    heading = _heading(xy, traj.data[anchor, YAW], anchor, heading_source)
    return _to_local(xy[anchor - past_len:anchor + 1], origin, heading), origin, heading


def window_samples(trajs: Iterable[Trajectory], cfg: WindowConfig = WindowConfig()) -> list[ForecastSample]:
    """Cut agent-centric samples from 10 Hz trajectories.

    Anchors sit at indices ``L, L + stride, ...`` up to ``len - M - 1``. The frame
    is translated to the anchor position and rotated so the heading maps to +x.
    With ``heading_source="yaw"`` the heading is the anchor state's yaw. With
    ``"displacement"`` it is the direction of the last displacement, or the yaw
    field for agents slower than 0.1 m/s over the last 0.5 s.

    Raises:
        ValueError: if a trajectory is not uniformly sampled at 10 Hz.
    """
    L, M = cfg.past_len, cfg.future_len
    samples = []
    for traj in trajs:
        if traj.class_id not in cfg.allowed_classes or len(traj) < cfg.span:
            continue
        if not is_uniform(traj.t, SAMPLE_HZ):
            raise ValueError(f"trajectory {traj.track_id} is not uniformly sampled at {SAMPLE_HZ} Hz")
        for a in range(L, len(traj) - M, cfg.stride):
            past, origin, heading = agent_frame(traj, a, L, cfg.heading_source)
            samples.append(ForecastSample(
                sample_id=f"{traj.scene_id}/{traj.track_id}/{a}",
                scene_id=traj.scene_id,
                track_id=traj.track_id,
                anchor_t=float(traj.t[a]),
                past=past,
                future=_to_local(traj.xy[a + 1:a + M + 1], origin, heading),
                origin=origin,
                heading=heading,
                provenance=traj.provenance,
            ))
    samples.sort(key=lambda s: (s.scene_id, s.track_id, s.anchor_t))
    return samples


def merge_sets(sets: Sequence[Sequence[ForecastSample]]) -> list[ForecastSample]:
    """Concatenate sample sets, prefixing ids with the set index. No deduplication.

    Raises:
        ValueError: if the sets disagree on past or future length.
    """
    shapes = {(len(s.past), len(s.future)) for group in sets for s in group}
    if len(shapes) > 1:
        raise ValueError(f"cannot merge samples with different window lengths: {sorted(shapes)}")
    return [replace(s, sample_id=f"{k}:{s.sample_id}") for k, group in enumerate(sets) for s in group]


def sample_fraction(trajs: Sequence[Trajectory], spec: SplitSpec) -> list[Trajectory]:
    """Uniformly draw ``ceil(fraction * N)`` whole trajectories.

    A single seeded permutation of the canonical (scene, track) order is cut at
    the requested size, so smaller fractions are nested in larger ones. The
    result keeps canonical order.
    """
    ordered = sorted(trajs, key=lambda t: (t.scene_id, t.track_id))
    n = len(ordered)
    k = min(n, math.ceil(spec.fraction * n - 1e-9))
    perm = np.random.default_rng(spec.seed).permutation(n)
    return [ordered[i] for i in sorted(perm[:k])]


def stack(samples: Sequence[ForecastSample]) -> tuple[np.ndarray, np.ndarray]:
    """(N, L+1, 2) pasts and (N, M, 2) futures."""
    if not samples:
        raise ValueError("no samples to stack")
    return np.stack([s.past for s in samples]), np.stack([s.future for s in samples])
