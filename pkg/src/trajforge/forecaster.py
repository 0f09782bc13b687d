"""Small multi-modal MLP forecaster with endpoint anchors and a winner-take-all loss.

Each of the K modes is a linear ramp from the origin to its anchor plus a
learned residual; mode confidences come from a softmax head. Training uses the
squared-displacement ADE of the best mode plus cross-entropy on that mode's
confidence. Gradients are computed by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import SAMPLE_HZ, ForecastSample

DEFAULT_HIDDEN = 64
DEFAULT_MODES = 6


@dataclass
class ForecasterParams:
    W1: np.ndarray  # (H, 2L+3)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (K*(2M+1), H)
    b2: np.ndarray  # (K*(2M+1),)
    anchors: np.ndarray  # (K, 2)

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_modes(self) -> int:
        return self.anchors.shape[0]

    @property
    def past_len(self) -> int:
        return (self.W1.shape[1] - 3) // 2

    @property
    def future_len(self) -> int:
        return (self.W2.shape[0] // self.n_modes - 1) // 2

    @property
    def size(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def with_flat(self, theta: np.ndarray) -> "ForecasterParams":
        shapes = [self.W1.shape, self.b1.shape, self.W2.shape, self.b2.shape]
        parts, start = [], 0
        for shape in shapes:
            n = int(np.prod(shape))
            parts.append(np.array(theta[start:start + n]).reshape(shape))
            start += n
        if start != len(theta):
            raise ValueError(f"expected {start} parameters, got {len(theta)}")
        return ForecasterParams(*parts, anchors=self.anchors.copy())

    def copy(self) -> "ForecasterParams":
        return self.with_flat(self.flat())


@dataclass
class ForecastOutput:
    modes: np.ndarray  # (K, M, 2)
    confidences: np.ndarray  # (K,)


@dataclass
class LossBreakdown:
    ade_term: float
    conf_term: float
    total: float


def init_params(anchors: np.ndarray, past_len: int = 20, future_len: int = 60, hidden: int = DEFAULT_HIDDEN,
                seed: int = 0) -> ForecasterParams:
    """Random hidden layer, zero output layer: initial modes are exactly the anchor ramps."""
    anchors = np.asarray(anchors, dtype=float)
    K = len(anchors)
    D = 2 * past_len + 3
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, 1.0 / math.sqrt(D), size=(hidden, D))
    out = K * (2 * future_len + 1)
    return ForecasterParams(W1, np.zeros(hidden), np.zeros((out, hidden)), np.zeros(out), anchors.copy())


def featurize_batch(past: np.ndarray, dt: float = 1.0 / SAMPLE_HZ) -> np.ndarray:
    """Features for (N, L+1, 2) agent-centric pasts -> (N, 2L+3)."""
    past = np.asarray(past, dtype=float)
    disp = np.diff(past, axis=1)
    speed = np.linalg.norm(disp[:, -1], axis=1) / dt
    mean_dir = disp[:, -3:].sum(axis=1)
    norm = np.linalg.norm(mean_dir, axis=1)
    moving = norm > 0
    cos = np.where(moving, mean_dir[:, 0] / np.where(moving, norm, 1.0), 1.0)
    sin = np.where(moving, mean_dir[:, 1] / np.where(moving, norm, 1.0), 0.0)
    return np.concatenate([disp.reshape(len(past), -1), speed[:, None], cos[:, None], sin[:, None]], axis=1)


def featurize(sample: ForecastSample) -> np.ndarray:
    """Past displacements, current speed (m/s) and recent heading (cos, sin)."""
    return featurize_batch(sample.past[None])[0]


def _ramps(params: ForecasterParams) -> np.ndarray:
    M = params.future_len
    steps = np.arange(1, M + 1) / M
    return params.anchors[:, None, :] * steps[None, :, None]  # (K, M, 2)


def _check_finite(params: ForecasterParams):
    for name in ("W1", "b1", "W2", "b2", "anchors"):
        if not np.all(np.isfinite(getattr(params, name))):
            raise ValueError(f"non-finite entries in parameter {name}")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward_batch(params: ForecasterParams, features: np.ndarray):
    """Returns modes (N, K, M, 2), confidences (N, K) and the hidden activations."""
    K, M = params.n_modes, params.future_len
    hidden = np.tanh(features @ params.W1.T + params.b1)
    raw = hidden @ params.W2.T + params.b2
    residual = raw[:, :K * 2 * M].reshape(-1, K, M, 2)
    logits = raw[:, K * 2 * M:]
    modes = _ramps(params)[None] + residual
    return modes, np.exp(_log_softmax(logits)), hidden, logits


def predict(params: ForecasterParams, past: np.ndarray, batch_size: int = 4096):
    """Modes and confidences for stacked pasts (N, L+1, 2)."""
    _check_finite(params)
    feats = featurize_batch(past)
    modes, confs = [], []
    for start in range(0, len(feats), batch_size):
        m, c, _, _ = forward_batch(params, feats[start:start + batch_size])
        modes.append(m)
        confs.append(c)
    return np.concatenate(modes), np.concatenate(confs)


def forward(params: ForecasterParams, sample: ForecastSample) -> ForecastOutput:
    _check_finite(params)
    modes, conf, _, _ = forward_batch(params, featurize(sample)[None])
    return ForecastOutput(modes[0], conf[0])


def loss_and_grad_arrays(params: ForecasterParams, features: np.ndarray, future: np.ndarray,
                         conf_weight: float = 1.0):
    """Winner-take-all loss and its exact gradient w.r.t. ``params.flat()``.

    Per sample the winning mode minimizes the mean squared displacement
    (lowest index on ties). The regression term is that mode's mean squared
    displacement, the confidence term is ``-log`` of its softmax probability;
    both are averaged over the batch.
    """
    B = len(features)
    if B == 0:
        raise ValueError("empty batch")
    K, M = params.n_modes, params.future_len
    modes, _, hidden, logits = forward_batch(params, features)
    err = modes - future[:, None]  # (B, K, M, 2)
    ade = (err ** 2).sum(axis=-1).mean(axis=-1)  # (B, K)
    win = np.argmin(ade, axis=1)
    rows = np.arange(B)
    log_p = _log_softmax(logits)
    ade_term = float(ade[rows, win].mean())
    conf_term = float(-log_p[rows, win].mean())

    d_raw = np.zeros((B, K * (2 * M + 1)))
    d_res = np.zeros((B, K, M, 2))
    d_res[rows, win] = err[rows, win] * (2.0 / (M * B))
    d_raw[:, :K * 2 * M] = d_res.reshape(B, -1)
    d_logits = np.exp(log_p)
    d_logits[rows, win] -= 1.0
    d_raw[:, K * 2 * M:] = d_logits * (conf_weight / B)

    dW2 = d_raw.T @ hidden
    db2 = d_raw.sum(axis=0)
    d_pre = (d_raw @ params.W2) * (1.0 - hidden ** 2)
    dW1 = d_pre.T @ features
    db1 = d_pre.sum(axis=0)
    grad = np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])
    return LossBreakdown(ade_term, conf_term, ade_term + conf_weight * conf_term), grad


def loss_and_grad(params: ForecasterParams, batch: Sequence[ForecastSample], conf_weight: float = 1.0):
    if not batch:
        raise ValueError("empty batch")
    _check_finite(params)
    past = np.stack([s.past for s in batch])
    future = np.stack([s.future for s in batch])
    return loss_and_grad_arrays(params, featurize_batch(past), future, conf_weight)


def radial_anchors(K: int) -> np.ndarray:
    """Fallback intention points: radii 5 and 20 m at headings -30, 0, +30 degrees."""
    grid = [(r * math.cos(h), r * math.sin(h)) for r in (5.0, 20.0) for h in (-math.pi / 6, 0.0, math.pi / 6)]
    while len(grid) < K:
        r = 20.0 * (1 + len(grid) // 6)
        h = (len(grid) % 6 - 2.5) * math.pi / 12
        grid.append((r * math.cos(h), r * math.sin(h)))
    return np.array(grid[:K])


def kmeans(points: np.ndarray, K: int, seed: int = 0, iterations: int = 50) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding. Empty clusters keep their center."""
    rng = np.random.default_rng(seed)
    points = np.asarray(points, dtype=float)
    centers = [points[rng.integers(len(points))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        idx = rng.choice(len(points), p=d2 / d2.sum())
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    centers = np.array(centers)
    for _ in range(iterations):
        labels = ((points[:, None] - centers[None]) ** 2).sum(axis=2).argmin(axis=1)
        new = centers.copy()
        for k in range(K):
            members = points[labels == k]
            if len(members):
                new[k] = members.mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def fit_anchors(samples, K: int = DEFAULT_MODES, seed: int = 0) -> np.ndarray:
    """Cluster future endpoints into K anchors.

    Accepts a list of samples or an (N, M, 2) future array. Falls back to
    :func:`radial_anchors` when fewer than K distinct endpoints exist.
    """
    if isinstance(samples, np.ndarray):
        endpoints = samples[:, -1]
    else:
        endpoints = np.array([s.future[-1] for s in samples]).reshape(-1, 2)
    if len(endpoints) == 0:
        raise ValueError("cannot fit anchors on an empty sample set")
    if len(np.unique(endpoints, axis=0)) < K:
        return radial_anchors(K)
    return kmeans(endpoints, K, seed=seed)
