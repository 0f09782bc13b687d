"""Trajectory forecasting with pre-training on pseudo-labeled trajectories.

The pipeline simulates ground-truth scenes, runs a noisy detector and a
Kalman tracker to mine pseudo-labeled trajectories, cuts agent-centric
forecasting samples, and pre-trains / fine-tunes a small multi-modal MLP.
"""

__version__ = "0.1.0"

from .dataset import ForecastSample, SplitSpec, WindowConfig, merge_sets, sample_fraction, window_samples
from .forecaster import ForecasterParams, ForecastOutput, fit_anchors, forward, init_params, loss_and_grad, predict
from .geometry import Box3D, Trajectory, TrajState, bev_iou, resample_linear, wrap_angle
from .metrics import MetricsConfig, MetricsReport, assess_pseudo_quality, eval_sample, eval_set, map_f
from .simulator import PROFILES, DetectorProfile, SceneConfig, detect, generate_scene
from .tracker import TrackerConfig, hungarian, track_sequence
from .training import TrainConfig, TrainRun, ppt_protocol, train

__all__ = [
    "Box3D", "DetectorProfile", "ForecastOutput", "ForecastSample", "ForecasterParams", "MetricsConfig",
    "MetricsReport", "PROFILES", "SceneConfig", "SplitSpec", "TrackerConfig", "TrainConfig", "TrainRun",
    "TrajState", "Trajectory", "WindowConfig", "assess_pseudo_quality", "bev_iou", "detect", "eval_sample",
    "eval_set", "fit_anchors", "forward", "generate_scene", "hungarian", "init_params", "loss_and_grad", "map_f",
    "merge_sets", "ppt_protocol", "predict", "resample_linear", "sample_fraction", "track_sequence", "train",
    "window_samples", "wrap_angle",
]
