"""Boxes, trajectory containers and the planar geometry shared by every stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

GT_PROVENANCE = "gt"
VEHICLE = 0

# Column layout of ``Trajectory.data``.
CX, CY, CZ, YAW, LENGTH, WIDTH, HEIGHT = range(7)

_TIME_TOL = 1e-9


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]. Works on scalars and arrays."""
    if isinstance(a, (float, int)):
        return math.pi - (math.pi - a) % (2.0 * math.pi)
    wrapped = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def pseudo_provenance(profile_id: str) -> str:
    return f"pseudo:{profile_id}"


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box with detection score.

    Attributes:
        cx, cy, cz: Center in meters.
        length, width, height: Extents in meters, strictly positive.
        yaw: Heading in radians, normalized into (-pi, pi] on construction.
        score: Confidence in [0, 1].
        class_id: Object class.
        t: Frame timestamp in seconds.
    """

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float
    score: float = 1.0
    class_id: int = VEHICLE
    t: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height > 0):
            raise ValueError(f"box dimensions must be positive, got {self.length}, {self.width}, {self.height}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def corners(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])


@dataclass(frozen=True)
class TrajState:
    t: float
    cx: float
    cy: float
    cz: float
    yaw: float
    length: float
    width: float
    height: float
    score: Optional[float] = None


@dataclass
class Trajectory:
    """Time-ordered states of one object, stored column-wise.

    ``data`` has shape (N, 7) with columns cx, cy, cz, yaw, length, width,
    height. ``score`` is None for ground truth.
    """

    scene_id: str
    track_id: str
    t: np.ndarray
    data: np.ndarray
    class_id: int = VEHICLE
    provenance: str = GT_PROVENANCE
    score: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.data = np.asarray(self.data, dtype=float).reshape(-1, 7)
        if self.score is not None:
            self.score = np.asarray(self.score, dtype=float)
        if len(self.t) != len(self.data):
            raise ValueError("timestamps and states differ in length")
        if len(self.t) >= 2 and np.any(np.diff(self.t) <= 0):
            raise ValueError(f"timestamps of track {self.track_id} are not strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def xy(self) -> np.ndarray:
        return self.data[:, :2]

    @property
    def states(self) -> list[TrajState]:
        scores = self.score if self.score is not None else [None] * len(self)
        return [
            TrajState(float(t), *map(float, row), score=None if s is None else float(s))
            for t, row, s in zip(self.t, self.data, scores)
        ]

    @classmethod
    def from_states(cls, scene_id, track_id, states, class_id=VEHICLE, provenance=GT_PROVENANCE):
        t = [s.t for s in states]
        data = [[s.cx, s.cy, s.cz, s.yaw, s.length, s.width, s.height] for s in states]
        score = None
        if states and states[0].score is not None:
            score = [s.score for s in states]
        return cls(scene_id, track_id, t, data, class_id, provenance, score)

    def box_at(self, i: int) -> Box3D:
        cx, cy, cz, yaw, l, w, h = self.data[i]
        score = 1.0 if self.score is None else float(self.score[i])
        return Box3D(cx, cy, cz, l, w, h, yaw, score, self.class_id, float(self.t[i]))


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip(subject: list, a: np.ndarray, b: np.ndarray) -> list:
    # Keep the part of ``subject`` left of the directed edge a->b.
    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    out = []
    n = len(subject)
    for i in range(n):
        cur, nxt = subject[i], subject[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc >= 0:
            out.append(cur)
        if (sc >= 0) != (sn >= 0):
            w = sc / (sc - sn)
            out.append(cur + w * (nxt - cur))
    return out


def polygon_intersection(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Intersection of two convex counter-clockwise polygons (Sutherland-Hodgman)."""
    poly = [np.asarray(v, dtype=float) for v in p]
    for i in range(len(q)):
        if not poly:
            break
        poly = _clip(poly, q[i], q[(i + 1) % len(q)])
    return np.array(poly).reshape(-1, 2)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view IoU of two yaw-oriented footprints."""
    if a == b:
        return 1.0
    # Quick reject on circumscribed circles.
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb:
        return 0.0
    inter = _polygon_area(polygon_intersection(a.corners(), b.corners()))
    union = a.length * a.width + b.length * b.width - inter
    return float(min(1.0, max(0.0, inter / union)))


def center_distance(a: Union[Box3D, TrajState], b: Union[Box3D, TrajState]) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def is_uniform(t: np.ndarray, hz: float, tol: float = 1e-6) -> bool:
    if len(t) < 2:
        return True
    return bool(np.all(np.abs(np.diff(t) - 1.0 / hz) <= tol))


def resample_linear(traj: Trajectory, target_hz: float = 10.0) -> Trajectory:
    """Resample onto a uniform ``1/target_hz`` grid by linear interpolation.

    Yaw follows the shortest arc. Grid points that coincide with an input
    timestamp copy that state verbatim, so original samples survive exactly.

    Raises:
        ValueError: "too-short trajectory" if fewer than two states.
    """
    if len(traj) < 2:
        raise ValueError("too-short trajectory")
    t = traj.t
    if is_uniform(t, target_hz, tol=_TIME_TOL):
        return Trajectory(traj.scene_id, traj.track_id, t.copy(), traj.data.copy(), traj.class_id,
                          traj.provenance, None if traj.score is None else traj.score.copy())

    step = 1.0 / target_hz
    n = int(math.floor((t[-1] - t[0]) * target_hz + 1e-6)) + 1
    grid = t[0] + np.arange(n) * step
    idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(t) - 2)
    w = (grid - t[idx]) / (t[idx + 1] - t[idx])

    d0, d1 = traj.data[idx], traj.data[idx + 1]
    out = d0 + w[:, None] * (d1 - d0)
    dyaw = wrap_angle(d1[:, YAW] - d0[:, YAW])
    out[:, YAW] = wrap_angle(d0[:, YAW] + w * dyaw)
    score = None
    if traj.score is not None:
        s0, s1 = traj.score[idx], traj.score[idx + 1]
        score = s0 + w * (s1 - s0)

    # Snap grid points onto original samples.
    near = np.searchsorted(t, grid)
    for g, j in enumerate(near):
        for cand in (j - 1, j):
            if 0 <= cand < len(t) and abs(t[cand] - grid[g]) <= _TIME_TOL:
                grid[g] = t[cand]
                out[g] = traj.data[cand]
                if score is not None:
                    score[g] = traj.score[cand]
    return Trajectory(traj.scene_id, traj.track_id, grid, out, traj.class_id, traj.provenance, score)
