"""Non-learning tracking-by-detection: NMS, Kalman filtering and Hungarian association.

``track_sequence`` turns the detection frames of one scene into pseudo-labeled
trajectories resampled at 10 Hz.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .geometry import (Box3D, TrajState, Trajectory, bev_iou, pseudo_provenance, resample_linear,
                       wrap_angle)
from .simulator import DetectionFrame, DetectorProfile

log = logging.getLogger(__name__)

# Dynamic state layout.
_CX, _CY, _CZ, _YAW, _VX, _VY = range(6)
_H = np.zeros((4, 6))
_H[[0, 1, 2, 3], [0, 1, 2, 3]] = 1.0

DIM_EMA_ALPHA = 0.5


@dataclass(frozen=True)
class TrackerConfig:
    """Tracker hyper-parameters.

    ``max_birth_speed`` widens the gate of tracks that have a single hit and
    therefore no velocity estimate yet: their gate radius is
    ``gate_center_distance + max_birth_speed * dt``.
    """

    nms_score_threshold: float = 0.2
    nms_iou_threshold: float = 0.5
    gate_center_distance: float = 2.0
    min_hits: int = 3
    max_age: int = 2
    process_noise_q: tuple = (0.01, 0.01, 0.01, 0.01, 0.25, 0.25)
    measurement_noise_r: tuple = (0.04, 0.04, 0.04, 0.01)
    init_velocity_var: float = 100.0
    max_birth_speed: float = 20.0
    association_cost: str = "center_distance"
    output_hz: float = 10.0

    def __post_init__(self):
        for name in ("nms_score_threshold", "nms_iou_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if self.gate_center_distance <= 0:
            raise ValueError("gate_center_distance must be positive")
        if self.association_cost not in ("center_distance", "neg_iou"):
            raise ValueError(f"unknown association cost {self.association_cost!r}")
        if len(self.process_noise_q) != 6 or len(self.measurement_noise_r) != 4:
            raise ValueError("process_noise_q needs 6 entries, measurement_noise_r needs 4")
        if min(self.process_noise_q) < 0 or min(self.measurement_noise_r) <= 0:
            raise ValueError("noise variances must be non-negative (R strictly positive)")

    @cached_property
    def Q(self) -> np.ndarray:
        return np.diag(self.process_noise_q)

    @cached_property
    def R(self) -> np.ndarray:
        return np.diag(self.measurement_noise_r)

    @classmethod
    def for_profile(cls, profile: DetectorProfile, **overrides) -> "TrackerConfig":
        """Config whose measurement noise matches a detector profile."""
        pos_var = max(profile.pos_sigma ** 2, 1e-12)
        yaw_var = max(profile.yaw_sigma ** 2, 1e-12)
        overrides.setdefault("measurement_noise_r", (pos_var, pos_var, pos_var, yaw_var))
        return cls(**overrides)


@dataclass
class KalmanTrack:
    """Constant-velocity track over ``[cx, cy, cz, yaw, vx, vy]``; box dims ride alongside."""

    track_id: str
    class_id: int
    mean: np.ndarray
    cov: np.ndarray
    dims: np.ndarray
    t: float
    hits: int = 1
    age_since_update: int = 0
    last_score: float = 0.0
    history: list = field(default_factory=list)

    @classmethod
    def from_detection(cls, track_id: str, det: Box3D, cfg: TrackerConfig) -> "KalmanTrack":
        mean = np.array([det.cx, det.cy, det.cz, det.yaw, 0.0, 0.0])
        cov = np.diag(list(cfg.measurement_noise_r) + [cfg.init_velocity_var] * 2)
        dims = np.array([det.length, det.width, det.height])
        track = cls(track_id, det.class_id, mean, cov, dims, det.t, last_score=det.score)
        track.history.append(track._state(det.t))
        return track

    def _state(self, t: float) -> TrajState:
        m = self.mean
        return TrajState(t, m[0], m[1], m[2], m[3], *map(float, self.dims), score=self.last_score)

    def to_trajectory(self, scene_id: str, provenance: str) -> Trajectory:
        return Trajectory.from_states(scene_id, self.track_id, self.history, self.class_id, provenance)


def nms(frame: DetectionFrame, cfg: TrackerConfig) -> DetectionFrame:
    """Score-threshold then greedy same-class BEV-IoU suppression.

    Output boxes are in descending score order; equal scores keep input order.
    """
    kept: list[Box3D] = []
    candidates = [b for b in frame.boxes if b.score >= cfg.nms_score_threshold]
    for box in sorted(candidates, key=lambda b: -b.score):
        if all(k.class_id != box.class_id or bev_iou(k, box) <= cfg.nms_iou_threshold for k in kept):
            kept.append(box)
    return DetectionFrame(frame.scene_id, frame.t, kept)


def _solve_square(a: np.ndarray):
    """Shortest-augmenting-path Hungarian on a square matrix.

    Returns ``(row_to_col, u, v)`` with dual potentials satisfying
    ``a[i, j] - u[i] - v[j] >= 0`` and equality on the matching.
    """
    n = a.shape[0]
    inf = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    cost = np.zeros((n + 1, n + 1))
    cost[1:, 1:] = a
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = cost[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _lexicographic_refine(tight: np.ndarray, row_to_col: np.ndarray, n_rows: int) -> np.ndarray:
    # Among perfect matchings inside the tight-edge graph, move each real row (in
    # order) to its smallest reachable column via an alternating path.
    size = len(row_to_col)
    col_owner = np.empty(size, dtype=int)
    col_owner[row_to_col] = np.arange(size)
    fixed = np.zeros(size, dtype=bool)

    def reroute(row, target, banned_col, seen):
        for k in np.flatnonzero(tight[row]):
            if k == banned_col or seen[k]:
                continue
            seen[k] = True
            if k == target:
                return [(row, k)]
            owner = col_owner[k]
            if fixed[owner]:
                continue
            path = reroute(owner, target, banned_col, seen)
            if path is not None:
                return [(row, k)] + path
        return None

    for i in range(n_rows):
        current = row_to_col[i]
        fixed[i] = True
        for j in np.flatnonzero(tight[i]):
            if j >= current:
                break
            r = col_owner[j]
            if fixed[r]:
                continue
            path = reroute(r, current, j, np.zeros(size, dtype=bool))
            if path is None:
                continue
            row_to_col[i] = j
            col_owner[j] = i
            for row, col in path:
                row_to_col[row] = col
                col_owner[col] = row
            break
    return row_to_col


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of an ``n x m`` cost matrix.

    Returns ``min(n, m)`` ``(row, col)`` pairs sorted by row. Among optimal
    matchings the lexicographically smallest (row-major) one is returned.

    Raises:
        ValueError: if any entry is NaN or infinite.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    size = max(n, m)
    square = np.zeros((size, size))
    square[:n, :m] = cost
    row_to_col, u, v = _solve_square(square)

    reduced = square - u[:, None] - v[None, :]
    tol = 1e-12 * max(1.0, float(np.abs(cost).max())) * size
    tight = reduced <= tol
    if tight.sum() > size:
        row_to_col = _lexicographic_refine(tight, row_to_col, n)
    return [(i, int(row_to_col[i])) for i in range(n) if row_to_col[i] < m]


def kalman_predict(track: KalmanTrack, dt: float, cfg: Optional[TrackerConfig] = None) -> KalmanTrack:
    """Constant-velocity prediction. Mutates ``track`` in place and returns it."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = cfg or TrackerConfig()
    F = np.eye(6)
    F[_CX, _VX] = dt
    F[_CY, _VY] = dt
    track.mean = F @ track.mean
    track.cov = F @ track.cov @ F.T + cfg.Q
    track.t += dt
    track.age_since_update += 1
    return track


def kalman_update(track: KalmanTrack, det: Box3D, cfg: Optional[TrackerConfig] = None) -> KalmanTrack:
    """Fuse a matched detection. Mutates ``track`` in place and returns it.

    Position and yaw go through the linear Kalman update (yaw innovation
    wrapped); box dims follow an exponential moving average.
    """
    cfg = cfg or TrackerConfig()
    z = np.array([det.cx, det.cy, det.cz, det.yaw])
    P = track.cov
    innovation = z - track.mean[:4]
    innovation[3] = wrap_angle(float(innovation[3]))
    S = P[:4, :4] + cfg.R
    K = np.linalg.solve(S, P[:4, :]).T  # S symmetric, so this is P H^T S^-1
    track.mean = track.mean + K @ innovation
    track.mean[_YAW] = wrap_angle(float(track.mean[_YAW]))
    # Joseph form keeps the covariance symmetric positive-definite.
    A = np.eye(6)
    A[:, :4] -= K
    cov = A @ P @ A.T + K @ cfg.R @ K.T
    track.cov = 0.5 * (cov + cov.T)
    track.dims = DIM_EMA_ALPHA * np.array([det.length, det.width, det.height]) + (1 - DIM_EMA_ALPHA) * track.dims
    track.hits += 1
    track.age_since_update = 0
    track.last_score = det.score
    track.t = det.t
    track.history.append(track._state(det.t))
    return track


_UNASSIGNABLE = 1e6


def _components(allowed: np.ndarray) -> list[tuple[list, list]]:
    # Connected components of the bipartite gate graph, in order of first row.
    n, m = allowed.shape
    row_seen = np.zeros(n, dtype=bool)
    col_seen = np.zeros(m, dtype=bool)
    comps = []
    for start in range(n):
        if row_seen[start] or not allowed[start].any():
            continue
        rows, cols = [], []
        stack = [start]
        row_seen[start] = True
        while stack:
            r = stack.pop()
            rows.append(r)
            for c in np.flatnonzero(allowed[r] & ~col_seen):
                col_seen[c] = True
                cols.append(int(c))
                for r2 in np.flatnonzero(allowed[:, c] & ~row_seen):
                    row_seen[r2] = True
                    stack.append(int(r2))
        comps.append((sorted(rows), sorted(cols)))
    return comps


def associate(cost: np.ndarray, allowed: np.ndarray) -> list[tuple[int, int]]:
    """Gated one-to-one assignment.

    Pairs outside the gate carry a large surrogate cost, so the assignment
    first maximizes the number of admissible pairs and then minimizes their
    cost. Components of the gate graph are independent and solved separately;
    inadmissible pairs are dropped from the result.
    """
    pairs = []
    for rows, cols in _components(allowed):
        if len(rows) == 1 and len(cols) == 1:
            pairs.append((rows[0], cols[0]))
            continue
        sub = np.where(allowed[np.ix_(rows, cols)], cost[np.ix_(rows, cols)], _UNASSIGNABLE)
        for i, j in hungarian(sub):
            if allowed[rows[i], cols[j]]:
                pairs.append((rows[i], cols[j]))
    return sorted(pairs)


def _association_cost(tracks: Sequence[KalmanTrack], dets: Sequence[Box3D], dt: float, cfg: TrackerConfig):
    n, m = len(tracks), len(dets)
    cost = np.full((n, m), _UNASSIGNABLE)
    allowed = np.zeros((n, m), dtype=bool)
    if n == 0 or m == 0:
        return cost, allowed
    txy = np.array([tr.mean[:2] for tr in tracks])
    dxy = np.array([[d.cx, d.cy] for d in dets])
    dist = np.linalg.norm(txy[:, None, :] - dxy[None, :, :], axis=2)
    gate = np.array([cfg.gate_center_distance + (cfg.max_birth_speed * dt if tr.hits == 1 else 0.0)
                     for tr in tracks])
    same_class = np.array([[tr.class_id == d.class_id for d in dets] for tr in tracks])
    allowed = same_class & (dist <= gate[:, None])
    for i, j in zip(*np.nonzero(allowed)):
        if cfg.association_cost == "center_distance":
            cost[i, j] = dist[i, j]
        else:
            tr = tracks[i]
            m_ = tr.mean
            pred = Box3D(m_[0], m_[1], m_[2], *tr.dims, m_[3], 1.0, tr.class_id, dets[j].t)
            cost[i, j] = -bev_iou(pred, dets[j])
    return cost, allowed


def track_sequence(frames: Sequence[DetectionFrame], cfg: TrackerConfig, profile_id: str = "unknown",
                   scene_id: Optional[str] = None) -> list[Trajectory]:
    """Track one scene's detection frames into pseudo-labeled trajectories.

    Per frame: NMS, predict live tracks, gated association (Hungarian), update
    matched tracks, spawn tracks for unmatched detections, drop tracks older
    than ``max_age``. Tracks with at least ``min_hits`` hits are exported and
    resampled to ``output_hz`` (which also fills coasted gaps linearly).

    Raises:
        ValueError: if frames are not strictly sorted by time.
    """
    times = [f.t for f in frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("detection frames must be sorted by strictly increasing t")
    if scene_id is None:
        scene_id = frames[0].scene_id if frames else ""
    live: list[KalmanTrack] = []
    finished: list[KalmanTrack] = []
    next_id = 0
    prev_t = None
    for frame in frames:
        dets = nms(frame, cfg).boxes
        dt = frame.t - prev_t if prev_t is not None else 0.0
        prev_t = frame.t
        for tr in live:
            kalman_predict(tr, frame.t - tr.t, cfg)
        cost, allowed = _association_cost(live, dets, dt, cfg)
        matched_dets = set()
        for i, j in associate(cost, allowed):
            kalman_update(live[i], dets[j], cfg)
            matched_dets.add(j)
        for j, det in enumerate(dets):
            if j not in matched_dets:
                live.append(KalmanTrack.from_detection(f"{scene_id}-trk{next_id}", det, cfg))
                next_id += 1
        still = []
        for tr in live:
            (finished if tr.age_since_update > cfg.max_age else still).append(tr)
        live = still
    finished.extend(live)

    provenance = pseudo_provenance(profile_id)
    out = []
    for tr in sorted(finished, key=lambda tr: int(tr.track_id.rsplit("trk", 1)[1])):
        if tr.hits >= cfg.min_hits and len(tr.history) >= 2:
            out.append(resample_linear(tr.to_trajectory(scene_id, provenance), cfg.output_hz))
    if not frames:
        log.warning("no detection frames for scene %r", scene_id)
    return out
