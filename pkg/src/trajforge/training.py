"""Mini-batch optimization of the forecaster and the pre-train / fine-tune protocol."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dataset import ForecastSample, SplitSpec, stack
from .forecaster import (DEFAULT_HIDDEN, DEFAULT_MODES, ForecasterParams, featurize_batch, fit_anchors,
                         init_params, loss_and_grad_arrays, predict)
from .metrics import MetricsConfig, MetricsReport, eval_set

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "momentum", "adam")
MODES = ("scratch", "pretrain", "finetune")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    lr_finetune_factor: float = 0.1
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1
    grad_clip: Optional[float] = None
    conf_weight: float = 1.0
    hidden: int = DEFAULT_HIDDEN
    n_modes: int = DEFAULT_MODES

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_every < 1:
            raise ValueError("batch_size, epochs and eval_every must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    effective_lr: float
    max_grad_norm: float
    val: Optional[MetricsReport] = None


@dataclass
class TrainRun:
    mode: str
    history: list
    final_params: ForecasterParams
    initial_val: Optional[MetricsReport] = None

    def val_curve(self, metric: str = "brier_fde") -> np.ndarray:
        return np.array([getattr(r.val, metric) if r.val else np.nan for r in self.history])


class _Optimizer:
    def __init__(self, cfg: TrainConfig, lr: float, n: int):
        self.cfg, self.lr = cfg, lr
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if cfg.optimizer == "sgd":
            return theta - self.lr * grad
        if cfg.optimizer == "momentum":
            self.m = cfg.momentum * self.m + grad
            return theta - self.lr * self.m
        self.t += 1
        self.m = cfg.beta1 * self.m + (1 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1 - cfg.beta2) * grad ** 2
        m_hat = self.m / (1 - cfg.beta1 ** self.t)
        v_hat = self.v / (1 - cfg.beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def _arrays(data):
    if isinstance(data, tuple):
        return data
    return stack(data)


def evaluate(params: ForecasterParams, data, metrics: MetricsConfig = MetricsConfig()) -> MetricsReport:
    past, future = _arrays(data)
    return eval_set(predict(params, past), future, metrics)


def train(init: Optional[ForecasterParams], data, val, cfg: TrainConfig, mode: str = "scratch",
          metrics: MetricsConfig = MetricsConfig()) -> TrainRun:
    """Fit the forecaster by mini-batch gradient descent.

    ``data`` and ``val`` are sample lists or ``(past, future)`` array pairs;
    ``val`` may be None. ``scratch``/``pretrain`` start from fresh parameters
    with anchors fit on ``data``; ``finetune`` starts from ``init`` (anchors
    kept) with the learning rate scaled by ``lr_finetune_factor``. Shuffling
    uses ``default_rng([seed, epoch])``.

    Raises:
        ValueError: on empty data, missing init in finetune mode, or a window
            length mismatch between ``init`` and ``data``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if data is None or len(data) == 0:
        raise ValueError("empty training set")
    past, future = _arrays(data)
    if len(past) == 0:
        raise ValueError("empty training set")
    L, M = past.shape[1] - 1, future.shape[1]
    if mode == "finetune":
        if init is None:
            raise ValueError("finetune mode needs an initial checkpoint")
        params = init.copy()
        lr = cfg.lr * cfg.lr_finetune_factor
    elif init is not None:
        params = init.copy()
        lr = cfg.lr
    else:
        anchors = fit_anchors(future, cfg.n_modes, seed=cfg.seed)
        params = init_params(anchors, L, M, cfg.hidden, seed=cfg.seed)
        lr = cfg.lr
    if (params.past_len, params.future_len) != (L, M):
        raise ValueError(f"checkpoint expects L={params.past_len}, M={params.future_len}; data has L={L}, M={M}")

    features = featurize_batch(past)
    val_arrays = _arrays(val) if val is not None else None
    initial_val = evaluate(params, val_arrays, metrics) if val_arrays is not None else None
    theta = params.flat()
    opt = _Optimizer(cfg, lr, len(theta))
    history = []
    n = len(features)
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total, max_norm = 0.0, 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grad = loss_and_grad_arrays(params.with_flat(theta), features[idx], future[idx], cfg.conf_weight)
            norm = float(np.linalg.norm(grad))
            if cfg.grad_clip is not None and norm > cfg.grad_clip:
                grad = grad * (cfg.grad_clip / norm)
                norm = float(np.linalg.norm(grad))
            max_norm = max(max_norm, norm)
            theta = opt.step(theta, grad)
            total += loss.total * len(idx)
        params = params.with_flat(theta)
        report = None
        if val_arrays is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            report = evaluate(params, val_arrays, metrics)
        history.append(EpochRecord(epoch, total / n, lr, max_norm, report))
        log.debug("%s epoch %d loss %.4f", mode, epoch, total / n)
    return TrainRun(mode, history, params, initial_val)


def fraction_of_samples(samples: Sequence[ForecastSample], spec: SplitSpec) -> list[ForecastSample]:
    """Keep the samples of a seeded ``ceil(fraction * N)`` subset of source trajectories.

    Uses the same nested permutation scheme as ``dataset.sample_fraction`` over
    the distinct (scene_id, track_id) keys present in ``samples``.
    """
    keys = sorted({(s.scene_id, s.track_id) for s in samples})
    k = min(len(keys), math.ceil(spec.fraction * len(keys) - 1e-9))
    perm = np.random.default_rng(spec.seed).permutation(len(keys))
    chosen = {keys[i] for i in perm[:k]}
    return [s for s in samples if (s.scene_id, s.track_id) in chosen]


@dataclass
class PPTResult:
    ppt: TrainRun
    scratch: TrainRun
    pretrain: TrainRun


def ppt_protocol(pseudo, labeled: Sequence[ForecastSample], val, fraction: float, cfg: TrainConfig,
                 fraction_seed: int = 0, pretrain_cfg: Optional[TrainConfig] = None,
                 pretrained: Optional[TrainRun] = None) -> PPTResult:
    """Pre-train on pseudo labels then fine-tune, versus training from scratch.

    Both arms see the identical labeled subset and are scored on ``val``.
    A finished pre-training run may be passed in to share it across fractions.

    Raises:
        ValueError: "empty pre-training set" when ``pseudo`` is empty.
    """
    if pretrained is None:
        if pseudo is None or len(pseudo) == 0 or (isinstance(pseudo, tuple) and len(pseudo[0]) == 0):
            raise ValueError("empty pre-training set")
        pretrained = train(None, pseudo, None, pretrain_cfg or cfg, mode="pretrain")
    subset = fraction_of_samples(labeled, SplitSpec(fraction, fraction_seed))
    if not subset:
        raise ValueError("labeled fraction selects no samples")
    ppt = train(pretrained.final_params, subset, val, cfg, mode="finetune")
    scratch = train(None, subset, val, cfg, mode="scratch")
    return PPTResult(ppt, scratch, pretrained)
