"""
A tiny multi-modal forecaster
=============================

Cut agent-centric windows from simulated trajectories, fit anchors, train the
MLP for a few epochs and read off the standard forecasting metrics.

Run: python3 demos/02_forecaster_basics.py
"""

import numpy as np

from trajforge.dataset import WindowConfig, stack, window_samples
from trajforge.forecaster import fit_anchors, forward
from trajforge.simulator import SceneConfig, generate_scenes
from trajforge.training import TrainConfig, evaluate, train

train_scenes = generate_scenes(SceneConfig(seed=0), 40)
val_scenes = generate_scenes(SceneConfig(seed=1), 10)
train_set = window_samples([t for sc in train_scenes for t in sc])
val_set = window_samples([t for sc in val_scenes for t in sc], WindowConfig(stride=10))
print(len(train_set), "training windows,", len(val_set), "validation windows")

# Every window starts at the origin and faces +x
s = train_set[0]
print("past[-1] =", s.past[-1], " heading (rad) =", round(s.heading, 3))

# %%
# Anchors are k-means centres of the future endpoints
_, future = stack(train_set)
print("anchors (m):\n", np.round(fit_anchors(future, 6), 1))

# %%
cfg = TrainConfig(epochs=8, batch_size=128, lr=1e-2)
run = train(None, train_set, val_set, cfg)
for rec in run.history:
    print(f"epoch {rec.epoch}: loss {rec.train_loss:8.3f}  val Brier-FDE {rec.val.brier_fde:.3f}")

rep = evaluate(run.final_params, val_set)
print(f"minADE {rep.min_ade:.2f}  minFDE {rep.min_fde:.2f}  Brier-FDE {rep.brier_fde:.2f}  miss {rep.miss_rate:.2f}")

out = forward(run.final_params, val_set[0])
print("mode confidences:", np.round(out.confidences, 3))
