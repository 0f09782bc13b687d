"""Desk-scale benchmark and the pre-training comparisons built on it.

A benchmark is a set of seeded ground-truth scene pools:

* ``labeled``: GT trajectories standing in for human annotation,
* ``val``: a disjoint GT pool used for every validation number,
* ``pseudo``: scenes whose GT is discarded after running a detector profile
  and the tracker, leaving only pseudo-labeled trajectories.

Every experiment returns plain row dicts so the CLI can write CSVs directly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dataset import SAMPLE_HZ, ForecastSample, SplitSpec, WindowConfig, agent_frame, stack, window_samples
from .forecaster import ForecasterParams, predict
from .geometry import Trajectory
from .metrics import MetricsConfig, MetricsReport, assess_pseudo_quality, map_f
from .simulator import PROFILES, SceneConfig, detect, detection_seed, generate_scenes, scene_seed
from .tracker import TrackerConfig, track_sequence
from .training import TrainConfig, TrainRun, evaluate, fraction_of_samples, train

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("brier_fde", "min_ade", "min_fde", "miss_rate")


@dataclass(frozen=True)
class ExperimentConfig:
    """Sizes and knobs of the desk-scale benchmark.

    ``pretrain_lr`` and ``pretrain_epochs`` apply to pre-training only; the
    scratch and fine-tune arms use the shared ``TrainConfig``.
    """

    fractions: tuple = (0.01, 0.1, 1.0)
    seeds: tuple = tuple(range(10))
    benchmark_seed: int = 0
    pseudo_profiles: tuple = ("noisy",)
    n_labeled_scenes: int = 200
    n_val_scenes: int = 40
    n_pseudo_scenes: int = 1000
    val_stride: int = 10
    pretrain_epochs: int = 5
    pretrain_lr: Optional[float] = None
    ablation_scenes: int = 200
    ablation_fractions: tuple = (0.01, 0.1, 1.0)
    ablation_samples: int = 6000
    diversity_profiles: tuple = ("moderate", "sparse")
    quality_profile: str = "moderate"
    quality_scenes: int = 20
    e2e_profile: str = "moderate"
    e2e_scenes: int = 20
    e2e_stride: int = 10
    target_speed_range: tuple = (8.0, 16.0)
    target_motion_mix: tuple = (("constant_velocity", 0.1), ("constant_turn", 0.4),
                                ("stop_and_go", 0.1), ("lane_change", 0.4))

    def __post_init__(self):
        for name in ("fractions", "ablation_fractions"):
            vals = getattr(self, name)
            if not vals or any(not 0.0 < f <= 1.0 for f in vals):
                raise ValueError(f"{name} must be a nonempty list of values in (0, 1]")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        for name in ("pseudo_profiles", "diversity_profiles"):
            for p in getattr(self, name):
                if p not in PROFILES:
                    raise ValueError(f"unknown detector profile {p!r} in {name}")
        for p in (self.quality_profile, self.e2e_profile):
            if p not in PROFILES:
                raise ValueError(f"unknown detector profile {p!r}")
        for name in ("n_labeled_scenes", "n_val_scenes", "n_pseudo_scenes", "val_stride", "pretrain_epochs",
                     "ablation_scenes", "ablation_samples", "quality_scenes", "e2e_scenes", "e2e_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# Scene pool ids keep pools disjoint: each pool gets its own base seed.
_POOLS = {"labeled": 1, "val": 2, "pseudo": 3, "quality": 4, "e2e": 5, "ablation": 6, "target": 7}


def pool_config(scene: SceneConfig, pool: str, benchmark_seed: int) -> SceneConfig:
    return replace(scene, seed=scene_seed(benchmark_seed, _POOLS[pool]), scene_id=pool)


def gt_pool(scene: SceneConfig, pool: str, n: int, benchmark_seed: int) -> list[list[Trajectory]]:
    return generate_scenes(pool_config(scene, pool, benchmark_seed), n)


def _pseudo_one(args):
    scene, profile_id, tracker, index, base = args
    profile = PROFILES[profile_id]
    frames = detect(scene, profile, detection_seed(scene_seed(base, index), profile_id))
    return track_sequence(frames, tracker_for(profile_id, tracker), profile_id,
                          scene_id=scene[0].scene_id if scene else None)


def tracker_for(profile_id: str, base: TrackerConfig) -> TrackerConfig:
    """``base`` with the measurement noise set from the detector profile."""
    p = PROFILES[profile_id]
    pos_var, yaw_var = max(p.pos_sigma ** 2, 1e-12), max(p.yaw_sigma ** 2, 1e-12)
    return replace(base, measurement_noise_r=(pos_var, pos_var, pos_var, yaw_var))


def pseudo_label(scenes: Sequence[Sequence[Trajectory]], profile_id: str, tracker: TrackerConfig,
                 base_seed: int = 0, jobs: int = 1) -> list[list[Trajectory]]:
    """Detector + tracker over each scene; output order never depends on ``jobs``."""
    work = [(sc, profile_id, tracker, i, base_seed) for i, sc in enumerate(scenes)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_pseudo_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    return [_pseudo_one(w) for w in work]


def _flatten(scenes):
    return [t for sc in scenes for t in sc]


@dataclass
class Benchmark:
    """Materialized sample sets for one benchmark seed."""

    labeled: list
    val: tuple  # stacked (past, future)
    pseudo: dict  # profile_id -> list[ForecastSample]
    window: WindowConfig

    @property
    def pseudo_all(self) -> list:
        return [s for p in sorted(self.pseudo) for s in self.pseudo[p]]


def build_benchmark(exp: ExperimentConfig, scene: SceneConfig = SceneConfig(), tracker: TrackerConfig = TrackerConfig(),
                    window: WindowConfig = WindowConfig(), jobs: int = 1) -> Benchmark:
    seed = exp.benchmark_seed
    labeled = window_samples(_flatten(gt_pool(scene, "labeled", exp.n_labeled_scenes, seed)), window)
    val = window_samples(_flatten(gt_pool(scene, "val", exp.n_val_scenes, seed)), replace(window, stride=exp.val_stride))
    pseudo_scenes = gt_pool(scene, "pseudo", exp.n_pseudo_scenes, seed)
    pseudo = {p: window_samples(_flatten(pseudo_label(pseudo_scenes, p, tracker, seed, jobs)), window)
              for p in exp.pseudo_profiles}
    log.info("benchmark: %d labeled, %d val, %s pseudo samples", len(labeled), len(val),
             {p: len(v) for p, v in pseudo.items()})
    return Benchmark(labeled, stack(val), pseudo, window)


def pretrain_config(exp: ExperimentConfig, train_cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(train_cfg, epochs=exp.pretrain_epochs, lr=exp.pretrain_lr or train_cfg.lr, seed=seed)


def relative_improvement(ppt: float, scratch: float) -> float:
    """Percent change of PPT over scratch; negative when PPT is better."""
    return (ppt - scratch) / scratch * 100.0


def _row(base: dict, report: MetricsReport) -> dict:
    row = dict(base)
    for k in METRIC_COLUMNS:
        row[k] = getattr(report, k)
    return row


@dataclass
class PPTExperiment:
    rows: list  # one per (fraction, seed, method)
    curves: list  # one per (fraction, seed, method, epoch)
    runs: dict = field(default_factory=dict)  # (fraction, seed, method) -> TrainRun
    pretrained: Optional[TrainRun] = None


def run_ppt(bench: Benchmark, exp: ExperimentConfig, train_cfg: TrainConfig,
            metrics: MetricsConfig = MetricsConfig(), pretrained: Optional[TrainRun] = None) -> PPTExperiment:
    """Label-fraction sweep: scratch versus pre-trained then fine-tuned.

    One pre-training run on all pseudo samples is shared by every (fraction,
    seed) cell; per seed, both arms see the same labeled subset and training
    seed.
    """
    if pretrained is None:
        pseudo = bench.pseudo_all
        if not pseudo:
            raise ValueError("empty pre-training set")
        pretrained = train(None, pseudo, None, pretrain_config(exp, train_cfg, exp.benchmark_seed), "pretrain", metrics)
    out = PPTExperiment([], [], {}, pretrained)
    for frac in exp.fractions:
        for seed in exp.seeds:
            subset = fraction_of_samples(bench.labeled, SplitSpec(frac, seed))
            cfg = replace(train_cfg, seed=seed)
            runs = {"scratch": train(None, subset, bench.val, cfg, "scratch", metrics),
                    "ppt": train(pretrained.final_params, subset, bench.val, cfg, "finetune", metrics)}
            final = {m: r.history[-1].val for m, r in runs.items()}
            for method in ("scratch", "ppt"):
                row = _row({"fraction": frac, "seed": seed, "method": method, "n_train": len(subset)}, final[method])
                for k in METRIC_COLUMNS:
                    row[f"rel_{k}"] = relative_improvement(getattr(final["ppt"], k), getattr(final["scratch"], k)) \
                        if method == "ppt" else 0.0
                out.rows.append(row)
                out.runs[(frac, seed, method)] = runs[method]
                for rec in runs[method].history:
                    if rec.val is not None:
                        out.curves.append(_row({"fraction": frac, "seed": seed, "method": method,
                                                "epoch": rec.epoch, "train_loss": rec.train_loss}, rec.val))
            log.info("fraction %g seed %d: scratch %.3f ppt %.3f", frac, seed, final["scratch"].brier_fde,
                     final["ppt"].brier_fde)
    return out


def epochs_to_converge(curve: Sequence[float], tol: float = 0.05) -> int:
    """First epoch (1-based) from which the curve stays within ``tol`` of its final value."""
    curve = np.asarray(curve, dtype=float)
    final = curve[-1]
    inside = np.abs(curve - final) <= tol * abs(final)
    outside = np.flatnonzero(~inside)
    return int(outside[-1] + 2) if len(outside) else 1


def convergence_rows(exp_result: PPTExperiment, tol: float = 0.05) -> list[dict]:
    rows = []
    for (frac, seed, method), run in sorted(exp_result.runs.items()):
        rows.append({"fraction": frac, "seed": seed, "method": method,
                     "epochs": len(run.history), "epochs_to_converge": epochs_to_converge(run.val_curve(), tol)})
    return rows


def _subsample(samples: Sequence[ForecastSample], n: int, seed: int) -> list:
    if n >= len(samples):
        return list(samples)
    idx = np.sort(np.random.default_rng(seed).permutation(len(samples))[:n])
    return [samples[i] for i in idx]


def run_quantity(exp: ExperimentConfig, train_cfg: TrainConfig, scene: SceneConfig = SceneConfig(),
                 tracker: TrackerConfig = TrackerConfig(), window: WindowConfig = WindowConfig(),
                 metrics: MetricsConfig = MetricsConfig(), val=None, jobs: int = 1) -> list[dict]:
    """Quantity ablation: pre-train only, on growing pseudo fractions."""
    seed = exp.benchmark_seed
    profile = exp.pseudo_profiles[0]
    scenes = gt_pool(scene, "ablation", exp.ablation_scenes, seed)
    pool = window_samples(_flatten(pseudo_label(scenes, profile, tracker, seed, jobs)), window)
    val = val if val is not None else _val_arrays(exp, scene, window)
    rows = []
    for frac in exp.ablation_fractions:
        for s in exp.seeds:
            subset = fraction_of_samples(pool, SplitSpec(frac, s))
            run = train(None, subset, None, pretrain_config(exp, train_cfg, s), "pretrain", metrics)
            rows.append(_row({"fraction": frac, "seed": s, "profiles": profile, "n_train": len(subset)},
                             evaluate(run.final_params, val, metrics)))
    return rows


def run_diversity(exp: ExperimentConfig, train_cfg: TrainConfig, scene: SceneConfig = SceneConfig(),
                  tracker: TrackerConfig = TrackerConfig(), window: WindowConfig = WindowConfig(),
                  metrics: MetricsConfig = MetricsConfig(), val=None, jobs: int = 1) -> list[dict]:
    """Diversity ablation at a fixed pseudo sample count.

    Each single-profile arm draws ``ablation_samples`` from its own profile;
    the mixed arm draws half from each of the first two profiles. All arms
    pseudo-label the same scenes.
    """
    seed = exp.benchmark_seed
    scenes = gt_pool(scene, "ablation", exp.ablation_scenes, seed)
    profiles = list(exp.diversity_profiles)[:2]
    pools = {p: window_samples(_flatten(pseudo_label(scenes, p, tracker, seed, jobs)), window) for p in profiles}
    val = val if val is not None else _val_arrays(exp, scene, window)
    n = exp.ablation_samples
    rows = []
    for s in exp.seeds:
        arms = {p: _subsample(pools[p], n, s) for p in profiles}
        if len(profiles) == 2:
            half = n // 2
            arms["+".join(profiles)] = _subsample(pools[profiles[0]], half, s) + \
                _subsample(pools[profiles[1]], n - half, s + 1_000_003)
        for name, data in arms.items():
            run = train(None, data, None, pretrain_config(exp, train_cfg, s), "pretrain", metrics)
            rows.append(_row({"profiles": name, "seed": s, "n_profiles": name.count("+") + 1, "n_train": len(data)},
                             evaluate(run.final_params, val, metrics)))
    return rows


def _val_arrays(exp: ExperimentConfig, scene: SceneConfig, window: WindowConfig):
    samples = window_samples(_flatten(gt_pool(scene, "val", exp.n_val_scenes, exp.benchmark_seed)),
                             replace(window, stride=exp.val_stride))
    return stack(samples)


def target_scene(exp: ExperimentConfig, scene: SceneConfig) -> SceneConfig:
    return replace(scene, speed_range=tuple(exp.target_speed_range), motion_mix=dict(exp.target_motion_mix))


def run_generalization(bench: Benchmark, exp: ExperimentConfig, train_cfg: TrainConfig,
                       scene: SceneConfig = SceneConfig(), metrics: MetricsConfig = MetricsConfig(),
                       pretrained: Optional[TrainRun] = None) -> list[dict]:
    """Source-to-target shift: both arms train on the source regime and are
    scored on a GT pool drawn from a faster, turn-heavy target regime."""
    target = window_samples(_flatten(gt_pool(target_scene(exp, scene), "target", exp.n_val_scenes,
                                             exp.benchmark_seed)), replace(bench.window, stride=exp.val_stride))
    target = stack(target)
    if pretrained is None:
        pretrained = train(None, bench.pseudo_all, None, pretrain_config(exp, train_cfg, exp.benchmark_seed),
                           "pretrain", metrics)
    rows = []
    for frac in exp.fractions:
        for s in exp.seeds:
            subset = fraction_of_samples(bench.labeled, SplitSpec(frac, s))
            cfg = replace(train_cfg, seed=s)
            res = {"scratch": train(None, subset, None, cfg, "scratch", metrics),
                   "ppt": train(pretrained.final_params, subset, None, cfg, "finetune", metrics)}
            reports = {m: evaluate(r.final_params, target, metrics) for m, r in res.items()}
            for m in ("scratch", "ppt"):
                row = _row({"fraction": frac, "seed": s, "method": m, "split": "target"}, reports[m])
                row["rel_brier_fde"] = relative_improvement(reports["ppt"].brier_fde, reports["scratch"].brier_fde) \
                    if m == "ppt" else 0.0
                rows.append(row)
    return rows


def quality_report(exp: ExperimentConfig, scene: SceneConfig = SceneConfig(), tracker: TrackerConfig = TrackerConfig(),
                   window: WindowConfig = WindowConfig(), metrics: MetricsConfig = MetricsConfig(),
                   profile_id: Optional[str] = None, jobs: int = 1) -> MetricsReport:
    """Pseudo-label quality on a held-out GT pool, windows at every time step."""
    profile_id = profile_id or exp.quality_profile
    scenes = gt_pool(scene, "quality", exp.quality_scenes, exp.benchmark_seed)
    pseudo = _flatten(pseudo_label(scenes, profile_id, tracker, exp.benchmark_seed, jobs))
    return assess_pseudo_quality(pseudo, _flatten(scenes), replace(window, stride=1), metrics)


@dataclass
class E2EScenes:
    """Tracked scenes for end-to-end evaluation, with the GT items they are scored against."""

    tracks: list  # per scene, list[Trajectory]
    gts: list  # (first_xy, future, frame)
    anchors: list  # per scene, anchor times


def build_e2e(exp: ExperimentConfig, scene: SceneConfig = SceneConfig(), tracker: TrackerConfig = TrackerConfig(),
              window: WindowConfig = WindowConfig(), jobs: int = 1) -> E2EScenes:
    scenes = gt_pool(scene, "e2e", exp.e2e_scenes, exp.benchmark_seed)
    tracks = pseudo_label(scenes, exp.e2e_profile, tracker, exp.benchmark_seed, jobs)
    return e2e_from_trajectories(scenes, tracks, window, exp.e2e_stride)


def e2e_from_trajectories(gt_scenes: Sequence[Sequence[Trajectory]], tracks: Sequence[Sequence[Trajectory]],
                          window: WindowConfig = WindowConfig(), stride: int = 10) -> E2EScenes:
    """Pair per-scene GT with per-scene tracker output (same scene order).

    Anchor times are every ``stride`` GT frames with a full past and future.
    """
    L, M = window.past_len, window.future_len
    gts, anchors = [], []
    for sc in gt_scenes:
        n = min((len(tr) for tr in sc), default=0)
        idx = list(range(L, n - M, stride))
        anchors.append([round(i / SAMPLE_HZ, 6) for i in idx])
        for a in idx:
            for tr in sc:
                if tr.class_id in window.allowed_classes:
                    gts.append((tr.xy[a].copy(), tr.xy[a + 1:a + M + 1].copy(), (tr.scene_id, a)))
    return E2EScenes(list(tracks), gts, anchors)


def e2e_predictions(params: ForecasterParams, e2e: E2EScenes, window: WindowConfig = WindowConfig()) -> list:
    """Forecast every confirmed track that has a full past at each anchor time."""
    L = window.past_len
    items, pasts = [], []
    for sc_tracks, times in zip(e2e.tracks, e2e.anchors):
        for tr in sc_tracks:
            if tr.class_id not in window.allowed_classes:
                continue
            for t in times:
                a = int(round((t - tr.t[0]) * SAMPLE_HZ))
                if a < L or a >= len(tr) or abs(tr.t[a] - t) > 1e-6:
                    continue
                past, origin, heading = agent_frame(tr, a, L, window.heading_source)
                score = float(tr.score[a]) if tr.score is not None else 1.0
                items.append((score, origin, heading, (tr.scene_id, int(round(t * SAMPLE_HZ)))))
                pasts.append(past)
    if not pasts:
        return []
    modes, _ = predict(params, np.stack(pasts))
    preds = []
    for (score, origin, heading, frame), m in zip(items, modes):
        c, s = math.cos(heading), math.sin(heading)
        world = m @ np.array([[c, s], [-s, c]]) + origin
        preds.append((score, origin, world, frame))
    return preds


def run_e2e(models: dict, e2e: E2EScenes, window: WindowConfig = WindowConfig(),
            metrics: MetricsConfig = MetricsConfig()) -> dict:
    """``map_f`` report per named model."""
    return {name: map_f(e2e_predictions(p, e2e, window), e2e.gts, metrics) for name, p in models.items()}
