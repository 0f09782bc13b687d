"""Command-line pipeline: simulate -> detect -> track -> build-dataset -> train -> eval, plus experiments.

Every stage writes its outputs atomically and records input/output digests in
``manifest.json`` next to its primary output. Any ``--section.key value`` flag
overrides the matching config key, e.g. ``--tracker.max-age 3``.

Exit codes: 0 success, 1 runtime failure (bad file contents, numerical error),
2 usage error (bad flags, invalid config, missing input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .dataset import SplitSpec, merge_sets, sample_fraction, window_samples
from .experiments import (METRIC_COLUMNS, build_benchmark, build_e2e, convergence_rows, e2e_from_trajectories,
                          pretrain_config, run_diversity, run_e2e, run_generalization, run_ppt, run_quantity,
                          tracker_for)
from .io import (FormatError, file_digest, read_checkpoint, read_detections, read_samples, read_trajectories,
                 write_checkpoint, write_csv, write_detections, write_json, write_samples, write_trajectories)
from .metrics import assess_pseudo_quality
from .simulator import PROFILES, detect, detection_seed, generate_scenes, scene_seed
from .svg import line_chart
from .tracker import track_sequence
from .training import evaluate, train

log = logging.getLogger("trajforge")

HISTORY_COLUMNS = ("epoch", "split", "loss", "minADE", "minFDE", "brier_fde", "miss_rate", "effective_lr")
PPT_COLUMNS = ("fraction", "seed", "method", "n_train") + METRIC_COLUMNS + tuple(f"rel_{k}" for k in METRIC_COLUMNS)


class UsageError(Exception):
    """Maps to exit code 2."""


class Manifest:
    """Per-directory record of stages: config hash, version, digests, wall clock."""

    def __init__(self, out_path, cfg: PipelineConfig, stage: str):
        self.path = Path(out_path).parent / "manifest.json"
        self.cfg, self.stage = cfg, stage
        self.inputs, self.outputs = {}, {}
        self.start = time.perf_counter()

    def input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def output(self, path):
        self.outputs[str(path)] = file_digest(path)

    def save(self):
        data = {}
        if self.path.exists():
            try:
                data = json.loads(self.path.read_text(encoding="utf-8"))
            except ValueError:
                data = {}
        data.setdefault("stages", {})[self.stage] = {
            "config_hash": self.cfg.digest(), "tool_version": __version__, "inputs": self.inputs,
            "outputs": self.outputs, "wall_clock_s": round(time.perf_counter() - self.start, 3)}
        data["tool_version"] = __version__
        write_json(self.path, data)


def _need(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {p}")
    return p


def _by_scene(trajs) -> dict:
    out: dict = {}
    for t in trajs:
        out.setdefault(t.scene_id, []).append(t)
    return out


def _scene_detection_seed(cfg: PipelineConfig, scene_id: str, profile_id: str) -> int:
    return detection_seed(scene_seed(cfg.scene.seed, zlib.crc32(scene_id.encode("utf-8"))), profile_id)


def _profile(name: str) -> str:
    if name not in PROFILES:
        raise UsageError(f"unknown detector profile {name!r}; known: {', '.join(sorted(PROFILES))}")
    return name


# stages

def cmd_simulate(args, cfg: PipelineConfig) -> int:
    m = Manifest(args.out, cfg, "simulate")
    scenes = generate_scenes(cfg.scene, args.n_scenes, args.start)
    write_trajectories(args.out, [t for sc in scenes for t in sc])
    m.output(args.out)
    m.save()
    log.info("wrote %d scenes to %s", len(scenes), args.out)
    return 0


def cmd_detect(args, cfg: PipelineConfig) -> int:
    profile_id = _profile(args.profile or cfg.detector_profiles.default)
    m = Manifest(args.out, cfg, "detect")
    m.input(_need(args.gt))
    gt = _by_scene(read_trajectories(args.gt))
    frames = []
    for scene_id in sorted(gt):
        frames.extend(detect(gt[scene_id], PROFILES[profile_id], _scene_detection_seed(cfg, scene_id, profile_id),
                             cfg.scene.roi))
    write_detections(args.out, frames)
    m.output(args.out)
    m.save()
    return 0


def cmd_track(args, cfg: PipelineConfig) -> int:
    profile_id = _profile(args.profile or cfg.detector_profiles.default)
    m = Manifest(args.out, cfg, "track")
    m.input(_need(args.detections))
    frames = read_detections(args.detections)
    tracker = tracker_for(profile_id, cfg.tracker)
    scenes: dict = {}
    for f in frames:
        scenes.setdefault(f.scene_id, []).append(f)
    if not frames:
        log.warning("no detection frames in %s; writing an empty trajectory file", args.detections)
    out = []
    for scene_id in sorted(scenes):
        out.extend(track_sequence(scenes[scene_id], tracker, profile_id, scene_id))
    write_trajectories(args.out, out)
    m.output(args.out)
    m.save()
    return 0


def cmd_build_dataset(args, cfg: PipelineConfig) -> int:
    m = Manifest(args.out, cfg, "build-dataset")
    sets = []
    for path in args.trajectories:
        m.input(_need(path))
        trajs = read_trajectories(path)
        if args.fraction < 1.0:
            trajs = sample_fraction(trajs, SplitSpec(args.fraction, args.fraction_seed))
        sets.append(window_samples(trajs, cfg.window))
    samples = sets[0] if len(sets) == 1 else merge_sets(sets)
    write_samples(args.out, samples)
    m.output(args.out)
    m.save()
    log.info("wrote %d samples to %s", len(samples), args.out)
    return 0


def _history_rows(run) -> list[dict]:
    rows = []
    if run.initial_val is not None:
        v = run.initial_val
        rows.append({"epoch": 0, "split": "val", "loss": "", "minADE": v.min_ade, "minFDE": v.min_fde,
                     "brier_fde": v.brier_fde, "miss_rate": v.miss_rate, "effective_lr": ""})
    for r in run.history:
        rows.append({"epoch": r.epoch, "split": "train", "loss": r.train_loss, "minADE": "", "minFDE": "",
                     "brier_fde": "", "miss_rate": "", "effective_lr": r.effective_lr})
        if r.val is not None:
            rows.append({"epoch": r.epoch, "split": "val", "loss": "", "minADE": r.val.min_ade,
                         "minFDE": r.val.min_fde, "brier_fde": r.val.brier_fde, "miss_rate": r.val.miss_rate,
                         "effective_lr": r.effective_lr})
    return rows


def cmd_train(args, cfg: PipelineConfig) -> int:
    init = None
    if args.init is not None:
        if not Path(args.init).is_file():
            raise UsageError(f"checkpoint not found: {args.init}")
    elif args.mode == "finetune":
        raise UsageError("checkpoint not found: finetune mode needs --init")
    m = Manifest(args.out, cfg, f"train-{args.mode}")
    m.input(_need(args.train))
    data = read_samples(args.train)
    if not data:
        raise UsageError(f"no samples in {args.train}")
    val = None
    if args.val:
        m.input(_need(args.val))
        val = read_samples(args.val)
    if args.init is not None:
        m.input(args.init)
        init, _ = read_checkpoint(args.init)
    run = train(init, data, val or None, cfg.train_config, args.mode, cfg.metrics)
    write_checkpoint(args.out, run.final_params, {"mode": args.mode, "epochs": len(run.history),
                                                  "seed": cfg.train.seed})
    m.output(args.out)
    if args.history:
        write_csv(args.history, _history_rows(run), HISTORY_COLUMNS)
        m.output(args.history)
    m.save()
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    params, _ = read_checkpoint(_need(args.checkpoint))
    samples = read_samples(_need(args.samples))
    if not samples:
        raise UsageError(f"no samples in {args.samples}")
    report = evaluate(params, samples, cfg.metrics)
    print(json.dumps(report.as_dict(), sort_keys=True))
    if args.out:
        m = Manifest(args.out, cfg, "eval")
        m.input(args.checkpoint)
        m.input(args.samples)
        write_json(args.out, report.as_dict())
        m.output(args.out)
        if args.csv:
            write_csv(args.csv, [report.as_dict()], list(report.as_dict()))
            m.output(args.csv)
        m.save()
    return 0


def cmd_assess_quality(args, cfg: PipelineConfig) -> int:
    pseudo = read_trajectories(_need(args.pseudo))
    gt = read_trajectories(_need(args.gt))
    window = replace(cfg.window, stride=args.stride)
    report = assess_pseudo_quality(pseudo, gt, window, cfg.metrics)
    print(json.dumps(report.as_dict(), sort_keys=True))
    if args.out:
        m = Manifest(args.out, cfg, "assess-quality")
        m.input(args.pseudo)
        m.input(args.gt)
        write_json(args.out, report.as_dict())
        m.output(args.out)
        m.save()
    return 0


def cmd_eval_e2e(args, cfg: PipelineConfig) -> int:
    gt = _by_scene(read_trajectories(_need(args.gt)))
    tracks = _by_scene(read_trajectories(_need(args.tracks)))
    order = sorted(gt)
    e2e = e2e_from_trajectories([gt[s] for s in order], [tracks.get(s, []) for s in order], cfg.window, args.stride)
    models = {}
    for path in args.checkpoint:
        models[Path(path).stem] = read_checkpoint(_need(path))[0]
    reports = run_e2e(models, e2e, cfg.window, cfg.metrics)
    rows = [{"model": k, **v.as_dict()} for k, v in reports.items()]
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    if args.out:
        m = Manifest(args.out, cfg, "eval-e2e")
        for p in [args.gt, args.tracks, *args.checkpoint]:
            m.input(p)
        write_csv(args.out, rows, list(rows[0]))
        m.output(args.out)
        m.save()
    return 0


# experiments

def _mean_by(rows, keys, value):
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def _write_svg(path, text: str, m: Manifest):
    from .io import atomic_open
    with atomic_open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    m.output(path)


def _summary_rows(rows, keys):
    out = []
    for k, mean in _mean_by(rows, keys, "brier_fde").items():
        row = dict(zip(keys, k))
        sub = [r for r in rows if tuple(r[x] for x in keys) == k]
        for metric in METRIC_COLUMNS:
            row[f"mean_{metric}"] = float(np.mean([r[metric] for r in sub]))
        row["n_seeds"] = len(sub)
        out.append(row)
    return out


def experiment_ppt(cfg: PipelineConfig, out: Path, jobs: int, m: Manifest):
    exp, tc = cfg.experiment, cfg.train_config
    bench = build_benchmark(exp, cfg.scene, cfg.tracker, cfg.window, jobs)
    res = run_ppt(bench, exp, tc, cfg.metrics)
    write_checkpoint(out / "pretrained.ckpt", res.pretrained.final_params, {"mode": "pretrain"})
    m.output(out / "pretrained.ckpt")
    write_csv(out / "ppt_results.csv", res.rows, PPT_COLUMNS)
    summary = _summary_rows(res.rows, ("fraction", "method"))
    write_csv(out / "ppt_summary.csv", summary, list(summary[0]))
    curve_cols = ("fraction", "seed", "method", "epoch", "train_loss") + METRIC_COLUMNS
    write_csv(out / "ppt_curves.csv", res.curves, curve_cols)
    conv = convergence_rows(res)
    write_csv(out / "ppt_convergence.csv", conv, list(conv[0]))

    e2e = build_e2e(exp, cfg.scene, cfg.tracker, cfg.window, jobs)
    e2e_rows = []
    top = max(exp.fractions)
    for seed in exp.seeds:
        models = {meth: res.runs[(top, seed, meth)].final_params for meth in ("scratch", "ppt")}
        for meth, rep in run_e2e(models, e2e, cfg.window, cfg.metrics).items():
            e2e_rows.append({"fraction": top, "seed": seed, "method": meth, **rep.as_dict()})
    write_csv(out / "ppt_e2e.csv", e2e_rows, list(e2e_rows[0]))
    for name in ("ppt_results.csv", "ppt_summary.csv", "ppt_curves.csv", "ppt_convergence.csv", "ppt_e2e.csv"):
        m.output(out / name)

    fr = sorted(exp.fractions)
    means = _mean_by(res.rows, ("method", "fraction"), "brier_fde")
    series = {meth: ([f * 100 for f in fr], [means[(meth, f)] for f in fr]) for meth in ("scratch", "ppt")}
    _write_svg(out / "ppt_fraction.svg", line_chart(series, "Brier-FDE vs labeled fraction", "labeled data (%)",
                                                    "Brier-FDE", logx=True), m)
    curves = _mean_by(res.curves, ("method", "fraction", "epoch"), "brier_fde")
    for f in fr:
        series = {}
        for meth in ("scratch", "ppt"):
            pts = sorted((k[2], v) for k, v in curves.items() if k[0] == meth and k[1] == f)
            series[meth] = ([p[0] for p in pts], [p[1] for p in pts])
        _write_svg(out / f"ppt_convergence_{f:g}.svg",
                   line_chart(series, f"Validation Brier-FDE per epoch, {f * 100:g}% labeled", "epoch",
                              "Brier-FDE"), m)


def experiment_quantity(cfg: PipelineConfig, out: Path, jobs: int, m: Manifest):
    rows = run_quantity(cfg.experiment, cfg.train_config, cfg.scene, cfg.tracker, cfg.window, cfg.metrics, jobs=jobs)
    cols = ("fraction", "seed", "profiles", "n_train") + METRIC_COLUMNS
    write_csv(out / "quantity.csv", rows, cols)
    m.output(out / "quantity.csv")
    means = _mean_by(rows, ("fraction",), "brier_fde")
    fr = sorted(k[0] for k in means)
    _write_svg(out / "quantity.svg", line_chart({"pre-trained": ([f * 100 for f in fr], [means[(f,)] for f in fr])},
                                                "Pseudo-data quantity", "pseudo data (%)", "Brier-FDE",
                                                logx=True), m)


def experiment_diversity(cfg: PipelineConfig, out: Path, jobs: int, m: Manifest):
    rows = run_diversity(cfg.experiment, cfg.train_config, cfg.scene, cfg.tracker, cfg.window, cfg.metrics, jobs=jobs)
    cols = ("profiles", "seed", "n_profiles", "n_train") + METRIC_COLUMNS
    write_csv(out / "diversity.csv", rows, cols)
    m.output(out / "diversity.csv")
    series = {}
    for name in dict.fromkeys(r["profiles"] for r in rows):
        sub = [r for r in rows if r["profiles"] == name]
        series[name] = ([r["seed"] for r in sub], [r["brier_fde"] for r in sub])
    _write_svg(out / "diversity.svg", line_chart(series, "Pseudo-data diversity", "seed", "Brier-FDE"), m)


def experiment_generalization(cfg: PipelineConfig, out: Path, jobs: int, m: Manifest):
    exp, tc = cfg.experiment, cfg.train_config
    bench = build_benchmark(exp, cfg.scene, cfg.tracker, cfg.window, jobs)
    pre = train(None, bench.pseudo_all, None, pretrain_config(exp, tc, exp.benchmark_seed), "pretrain", cfg.metrics)
    rows = run_generalization(bench, exp, tc, cfg.scene, cfg.metrics, pre)
    cols = ("fraction", "seed", "method", "split") + METRIC_COLUMNS + ("rel_brier_fde",)
    write_csv(out / "generalization.csv", rows, cols)
    m.output(out / "generalization.csv")


EXPERIMENTS = {"ppt": experiment_ppt, "quantity": experiment_quantity, "diversity": experiment_diversity,
               "generalization": experiment_generalization}


def cmd_experiment(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    m = Manifest(out / "x", cfg, f"experiment-{args.mode}")
    EXPERIMENTS[args.mode](cfg, out, args.jobs, m)
    m.save()
    return 0


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajforge", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI config file")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-scene stages")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"trajforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate ground-truth scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--n-scenes", type=int, default=1)
    s.add_argument("--start", type=int, default=0)

    s = sub.add_parser("detect", help="simulate a detector on GT trajectories")
    s.add_argument("--gt", required=True)
    s.add_argument("--profile")
    s.add_argument("--out", required=True)

    s = sub.add_parser("track", help="track detections into pseudo-labeled trajectories")
    s.add_argument("--detections", required=True)
    s.add_argument("--profile", help="detector profile the detections came from")
    s.add_argument("--out", required=True)

    s = sub.add_parser("build-dataset", help="window trajectories into forecasting samples")
    s.add_argument("--trajectories", nargs="+", required=True)
    s.add_argument("--fraction", type=float, default=1.0)
    s.add_argument("--fraction-seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train, pre-train or fine-tune the forecaster")
    s.add_argument("--train", required=True)
    s.add_argument("--val")
    s.add_argument("--mode", choices=("scratch", "pretrain", "finetune"), default="scratch")
    s.add_argument("--init", help="checkpoint to start from (required for finetune)")
    s.add_argument("--out", required=True)
    s.add_argument("--history", help="per-epoch history CSV")

    s = sub.add_parser("eval", help="forecasting metrics of a checkpoint on a sample set")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--out")
    s.add_argument("--csv")

    s = sub.add_parser("assess-quality", help="pseudo-label quality against GT")
    s.add_argument("--pseudo", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--out")

    s = sub.add_parser("eval-e2e", help="forecasting AP from tracked pasts")
    s.add_argument("--checkpoint", action="append", required=True)
    s.add_argument("--tracks", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--stride", type=int, default=10)
    s.add_argument("--out")

    s = sub.add_parser("experiment", help="run a benchmark comparison")
    s.add_argument("mode", choices=sorted(EXPERIMENTS))
    s.add_argument("--out", required=True)
    return p


COMMANDS = {"simulate": cmd_simulate, "detect": cmd_detect, "track": cmd_track,
            "build-dataset": cmd_build_dataset, "train": cmd_train, "eval": cmd_eval,
            "assess-quality": cmd_assess_quality, "eval-e2e": cmd_eval_e2e, "experiment": cmd_experiment}


def split_overrides(argv: list[str]) -> tuple[list[str], dict]:
    """Pull ``--section.key value`` / ``--section.key=value`` pairs out of argv."""
    rest, overrides = [], {}
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg.startswith("--") and "." in arg.split("=", 1)[0]:
            key, sep, value = arg[2:].partition("=")
            if not sep:
                if i + 1 >= len(argv):
                    raise UsageError(f"flag {arg} needs a value")
                value = argv[i + 1]
                i += 1
            overrides[key] = value
        else:
            rest.append(arg)
        i += 1
    return rest, overrides


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        rest, overrides = split_overrides(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"trajforge: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(rest)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.config:
            _need(args.config)
        cfg = load_config(args.config, overrides)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"trajforge: error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ValueError, OSError) as exc:
        print(f"trajforge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
