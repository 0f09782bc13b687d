"""
Pre-training on pseudo-labels, small scale
==========================================

Pre-train on noisy-profile pseudo-trajectories, fine-tune on a fraction of the
labeled data, and compare with training from scratch. About a minute on one
core; the full benchmark is `trajforge --config configs/benchmark.ini experiment ppt`.

Run: python3 demos/03_ppt_small.py [out.svg]
"""

import sys

import numpy as np

from trajforge.config import load_config
from trajforge.experiments import ExperimentConfig, build_benchmark, run_ppt
from trajforge.svg import line_chart

cfg = load_config("configs/benchmark.ini", env={})
exp = ExperimentConfig(fractions=(0.01, 0.1, 1.0), seeds=(0, 1), n_labeled_scenes=60, n_val_scenes=20,
                       n_pseudo_scenes=200, pretrain_epochs=10, pretrain_lr=3e-3)

bench = build_benchmark(exp, cfg.scene, cfg.tracker, cfg.window)
print(len(bench.labeled), "labeled,", len(bench.pseudo["noisy"]), "pseudo samples")

res = run_ppt(bench, exp, cfg.train_config, cfg.metrics)

# %%
# Relative change of Brier-FDE (negative = pre-training helps)
for f in exp.fractions:
    rel = [r["rel_brier_fde"] for r in res.rows if r["fraction"] == f and r["method"] == "ppt"]
    print(f"{f * 100:5g}% labeled: {np.mean(rel):+.1f}%")

means = {}
for r in res.rows:
    means.setdefault((r["method"], r["fraction"]), []).append(r["brier_fde"])
series = {m: ([f * 100 for f in exp.fractions], [np.mean(means[(m, f)]) for f in exp.fractions])
          for m in ("scratch", "ppt")}
svg = line_chart(series, "Brier-FDE vs labeled fraction", "labeled data (%)", "Brier-FDE", logx=True)
path = sys.argv[1] if len(sys.argv) > 1 else "ppt_small.svg"
with open(path, "w") as fh:
    fh.write(svg)
print("wrote", path)
