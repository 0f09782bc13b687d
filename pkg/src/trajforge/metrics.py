"""Forecasting metrics, pseudo-label quality assessment and end-to-end forecasting AP."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import WindowConfig, window_samples
from .geometry import Trajectory
from .tracker import hungarian


@dataclass(frozen=True)
class MetricsConfig:
    k: int = 6
    miss_threshold: float = 2.0
    match_threshold: float = 2.0
    match_cost: str = "mean_past"  # or "endpoint_past"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.miss_threshold <= 0 or self.match_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.match_cost not in ("mean_past", "endpoint_past"):
            raise ValueError(f"unknown match cost {self.match_cost!r}")


@dataclass
class SampleRecord:
    min_ade: float
    min_fde: float
    brier_fde: float
    miss: bool
    best_mode: int


@dataclass
class MetricsReport:
    n_samples: int
    min_ade: float
    min_fde: float
    brier_fde: float
    miss_rate: float
    match_rate: Optional[float] = None

    @property
    def empty(self) -> bool:
        return self.n_samples == 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class E2EReport:
    map_f: float
    n_true_positives: int
    n_false_predictions: int
    n_missed_gt: int
    min_ade: float
    min_fde: float

    def as_dict(self) -> dict:
        return asdict(self)


def eval_batch(modes: np.ndarray, confidences: np.ndarray, gt: np.ndarray, cfg: MetricsConfig = MetricsConfig()):
    """Vectorized per-sample metrics.

    Args:
        modes: (N, K, M, 2) predicted trajectories.
        confidences: (N, K) mode probabilities.
        gt: (N, M, 2) ground-truth futures.

    Returns:
        Dict of (N,) arrays: min_ade, min_fde, brier_fde, miss, best_mode.
    """
    modes = np.asarray(modes)[:, :cfg.k]
    confidences = np.asarray(confidences)[:, :cfg.k]
    gt = np.asarray(gt)
    if modes.shape[2] != gt.shape[1]:
        raise ValueError(f"prediction horizon {modes.shape[2]} does not match ground truth {gt.shape[1]}")
    if modes.shape[1] < cfg.k:
        raise ValueError(f"need at least {cfg.k} modes, got {modes.shape[1]}")
    dist = np.linalg.norm(modes - gt[:, None], axis=-1)  # (N, K, M)
    ade = dist.mean(axis=-1)
    fde = dist[..., -1]
    best = fde.argmin(axis=1)
    rows = np.arange(len(gt))
    min_fde = fde[rows, best]
    brier = min_fde + (1.0 - confidences[rows, best]) ** 2
    return {"min_ade": ade.min(axis=1), "min_fde": min_fde, "brier_fde": brier,
            "miss": min_fde > cfg.miss_threshold, "best_mode": best}


def eval_sample(output, gt_future: np.ndarray, cfg: MetricsConfig = MetricsConfig()) -> SampleRecord:
    """minADE_k, minFDE_k, Brier-FDE and miss flag for one forecast.

    Brier-FDE uses the confidence of the minFDE mode (lowest index on ties).
    """
    rec = eval_batch(output.modes[None], output.confidences[None], np.asarray(gt_future)[None], cfg)
    return SampleRecord(float(rec["min_ade"][0]), float(rec["min_fde"][0]), float(rec["brier_fde"][0]),
                        bool(rec["miss"][0]), int(rec["best_mode"][0]))


def report_from_records(rec: dict, match_rate: Optional[float] = None) -> MetricsReport:
    n = len(rec["min_fde"])
    if n == 0:
        return MetricsReport(0, float("nan"), float("nan"), float("nan"), float("nan"), match_rate)
    return MetricsReport(n, float(np.mean(rec["min_ade"])), float(np.mean(rec["min_fde"])),
                         float(np.mean(rec["brier_fde"])), float(np.mean(rec["miss"])), match_rate)


def eval_set(outputs, gts, cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """Mean metrics over a set of forecasts.

    ``outputs`` is either a list of :class:`ForecastOutput` or a
    ``(modes, confidences)`` pair of stacked arrays.
    """
    if isinstance(outputs, tuple):
        modes, confs = outputs
    else:
        if len(outputs) == 0:
            raise ValueError("cannot evaluate an empty set")
        modes = np.stack([o.modes for o in outputs])
        confs = np.stack([o.confidences for o in outputs])
    gts = np.asarray(gts)
    if len(gts) == 0 or len(modes) == 0:
        raise ValueError("cannot evaluate an empty set")
    if len(gts) != len(modes):
        raise ValueError("outputs and ground truths differ in count")
    return report_from_records(eval_batch(modes, confs, gts, cfg))


def assess_pseudo_quality(pseudo: Sequence[Trajectory], gt: Sequence[Trajectory],
                          window: WindowConfig = WindowConfig(),
                          cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """Score pseudo trajectories as single-mode forecasts of the ground truth.

    At every (scene, anchor time), pseudo and GT windows are matched one-to-one
    by Hungarian assignment on the world-frame distance between their pasts
    (mean over past positions, or last past position with
    ``match_cost="endpoint_past"``); pairs beyond ``match_threshold`` are
    dropped. The pseudo future of each matched pair is evaluated with k = 1 and
    confidence 1. ``match_rate`` is matched pairs over GT windows.
    """
    single = MetricsConfig(k=1, miss_threshold=cfg.miss_threshold, match_threshold=cfg.match_threshold,
                           match_cost=cfg.match_cost)

    def world_windows(samples):
        groups: dict = {}
        for s in samples:
            key = (s.scene_id, round(s.anchor_t, 6))
            groups.setdefault(key, []).append((s.to_world(s.past), s.to_world(s.future)))
        return groups

    p_groups = world_windows(window_samples(pseudo, window))
    g_groups = world_windows(window_samples(gt, window))
    n_gt = sum(len(v) for v in g_groups.values())
    pred, truth = [], []
    for key in sorted(g_groups):
        g = g_groups[key]
        p = p_groups.get(key, [])
        if not p:
            continue
        gp = np.stack([x[0] for x in g])
        pp = np.stack([x[0] for x in p])
        if cfg.match_cost == "mean_past":
            cost = np.linalg.norm(pp[:, None] - gp[None], axis=-1).mean(axis=-1)
        else:
            cost = np.linalg.norm(pp[:, None, -1] - gp[None, :, -1], axis=-1)
        for i, j in hungarian(cost):
            if cost[i, j] <= cfg.match_threshold:
                pred.append(p[i][1])
                truth.append(g[j][1])
    match_rate = len(truth) / n_gt if n_gt else 0.0
    if not truth:
        return MetricsReport(0, float("nan"), float("nan"), float("nan"), float("nan"), match_rate)
    modes = np.stack(pred)[:, None]
    rec = eval_batch(modes, np.ones((len(pred), 1)), np.stack(truth), single)
    return report_from_records(rec, match_rate)


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from a score-sorted TP/FP sequence."""
    if n_gt <= 0:
        raise ValueError("need at least one ground truth")
    tp = np.asarray(tp, dtype=float)
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changes = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def map_f(preds, gts, cfg: MetricsConfig = MetricsConfig()) -> E2EReport:
    """End-to-end forecasting AP.

    Args:
        preds: sequence of ``(score, first_xy, modes[, frame])`` where
            ``first_xy`` is the detected position at the forecast time and
            ``modes`` (K, M, 2) are world-frame forecasts.
        gts: sequence of ``(first_xy, future[, frame])`` with ``future`` (M, 2)
            in the world frame.

    Predictions are visited by descending score and greedily matched to the
    nearest unmatched GT of the same frame within ``match_threshold``. A
    matched prediction is a true positive iff its minFDE over the first k
    modes is within ``miss_threshold``; everything else is a false positive.
    """
    if len(gts) == 0:
        raise ValueError("map_f needs at least one ground truth")
    gt_frame = [g[2] if len(g) > 2 else None for g in gts]
    gt_xy = np.array([np.asarray(g[0], dtype=float) for g in gts]).reshape(-1, 2)
    by_frame: dict = {}
    for j, f in enumerate(gt_frame):
        by_frame.setdefault(f, []).append(j)
    by_frame = {f: np.array(idx) for f, idx in by_frame.items()}

    order = sorted(range(len(preds)), key=lambda i: -preds[i][0])
    taken = np.zeros(len(gts), dtype=bool)
    tp, ades, fdes = [], [], []
    for i in order:
        xy, modes = preds[i][1], preds[i][2]
        cand = by_frame.get(preds[i][3] if len(preds[i]) > 3 else None)
        if cand is None:
            tp.append(False)
            continue
        d = np.linalg.norm(gt_xy[cand] - np.asarray(xy, dtype=float), axis=1)
        d[taken[cand]] = np.inf
        best = int(np.argmin(d))
        if d[best] > cfg.match_threshold:
            tp.append(False)
            continue
        j = int(cand[best])
        taken[j] = True
        err = np.linalg.norm(np.asarray(modes)[:cfg.k] - np.asarray(gts[j][1])[None], axis=-1)
        min_fde = float(err[:, -1].min())
        ades.append(float(err.mean(axis=1).min()))
        fdes.append(min_fde)
        tp.append(min_fde <= cfg.miss_threshold)
    tp = np.array(tp, dtype=bool)
    n_tp = int(tp.sum())
    return E2EReport(
        map_f=average_precision(tp, len(gts)),
        n_true_positives=n_tp,
        n_false_predictions=int(len(tp) - n_tp),
        n_missed_gt=int(len(gts) - n_tp),
        min_ade=float(np.mean(ades)) if ades else float("nan"),
        min_fde=float(np.mean(fdes)) if fdes else float("nan"),
    )
