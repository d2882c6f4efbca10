"""Self-supervised traversability estimation with meta-learning.

Labels come from the vehicle's own IMU response (normalized RMS of
vertical/roll/pitch accelerations over a 1 s forward window); features are
the rotated local height patch plus current speed. A Gaussian NLL head
provides aleatoric uncertainty that the planner consumes as cost std.

Training paths:
  train_baseline  pooled minibatch Adam over all experiences
  meta_train      first-order MAML over terrain tasks
  adapt           few full-batch SGD steps on a support set
  OnlineAdapter   periodic adaptation from a ring buffer during a run
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mapping import CostMap, ElevationGrid, extract_patch_batch
from .nn import (
    AdamState,
    MlpParams,
    TrainBatch,
    adam_step,
    backprop,
    batch_loss,
    clip_grad_norm,
    forward_gaussian_batch,
    init_params,
    sgd_step,
)

Z_ACC_NORM = 10.0      # m/s^2, full-scale vertical acceleration
ROLL_ACC_NORM = 5.0    # rad/s^2
PITCH_ACC_NORM = 5.0   # rad/s^2
SPEED_NORM = 10.0      # m/s, feature normalizer
LABEL_WINDOW = 1.0     # s of IMU response ahead of each feature
INPUT_DIM = 27         # 26 patch features + normalized speed
ADAPT_GRAD_CLIP = 1.0  # global-norm cap for inner-loop SGD gradients
DEFAULT_HIDDEN = (32, 32)
MIN_TASK_SIZE = 64     # experiences needed for meta-training eligibility


@dataclass
class Experience:
    """One (terrain feature, IMU-derived label) pair."""

    feature: np.ndarray
    label: float
    task_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.feature, dtype=np.float64)
        if f.shape != (INPUT_DIM,):
            raise ValueError(f"feature must have length {INPUT_DIM}")
        if not np.isfinite(f).all():
            raise ValueError("feature must be finite")
        if not 0.0 <= self.label <= 1.0:
            raise ValueError("label must lie in [0, 1]")
        self.feature = f

    def to_json(self) -> str:
        return json.dumps({"task_id": self.task_id,
                           "feature": self.feature.tolist(),
                           "label": self.label,
                           "timestamp": self.timestamp})

    @classmethod
    def from_json(cls, line: str) -> "Experience":
        d = json.loads(line)
        return cls(feature=np.array(d["feature"]), label=float(d["label"]),
                   task_id=int(d["task_id"]), timestamp=float(d["timestamp"]))


@dataclass
class TaskDataset:
    """Experiences from one terrain family."""

    task_id: int
    experiences: list = field(default_factory=list)
    terrain_summary: dict = field(default_factory=dict)

    def __post_init__(self):
        for e in self.experiences:
            if e.task_id != self.task_id:
                raise ValueError("experience task_id mismatch")

    def __len__(self):
        return len(self.experiences)

    @property
    def meta_eligible(self) -> bool:
        return len(self.experiences) >= MIN_TASK_SIZE

    def features(self) -> np.ndarray:
        return np.stack([e.feature for e in self.experiences])

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.experiences])


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.01
    inner_steps: int = 5
    outer_lr: float = 1e-3
    meta_batch_tasks: int = 4
    support_frac: float = 0.5
    epochs: int = 300

    def __post_init__(self):
        if self.inner_lr < 0 or self.outer_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.meta_batch_tasks < 1 or self.epochs < 1:
            raise ValueError("meta_batch_tasks and epochs must be >= 1")
        if not 0.0 < self.support_frac < 1.0:
            raise ValueError("support_frac must be in (0, 1)")


def compute_label(imu_window, window: float = LABEL_WINDOW) -> float:
    """Normalized RMS of the IMU response; clamped to [0, 1]."""
    if len(imu_window) == 0:
        raise ValueError("empty IMU window")
    terms = np.array([
        (abs(s.z_acc) / Z_ACC_NORM + abs(s.roll_acc) / ROLL_ACC_NORM
         + abs(s.pitch_acc) / PITCH_ACC_NORM) / 3.0
        for s in imu_window])
    return float(min(np.sqrt(np.mean(terms * terms)), 1.0))


def stack_batch(experiences) -> TrainBatch:
    X = np.stack([e.feature for e in experiences])
    y = np.array([e.label for e in experiences])
    return TrainBatch(inputs=X, targets=y)


def attach_labels(records, grid_snapshots, task_id: int = 0,
                  window: float = LABEL_WINDOW, stride: int = 1):
    """Pair patch features with the IMU response over the next `window` s.

    records: chronological StepRecords. grid_snapshots: list of
    (time, ElevationGrid) in chronological order; each feature uses the
    latest snapshot at or before its step. Steps whose forward window runs
    past the log, that precede the first snapshot, or whose patch centre is
    unknown are skipped.
    """
    if isinstance(grid_snapshots, ElevationGrid):
        grid_snapshots = [(-np.inf, grid_snapshots)]
    out = []
    times = np.array([r.t for r in records])
    snap_idx = 0
    for i in range(0, len(records), stride):
        r = records[i]
        while (snap_idx + 1 < len(grid_snapshots)
               and grid_snapshots[snap_idx + 1][0] <= r.t):
            snap_idx += 1
        if grid_snapshots[snap_idx][0] > r.t:
            continue
        grid = grid_snapshots[snap_idx][1]
        if times[-1] < r.t + window:
            continue  # forward window would run off the log
        j = int(np.searchsorted(times, r.t + window))
        feats, valid = extract_patch_batch(
            grid, [r.state.x], [r.state.y], r.state.heading)
        if not valid[0]:
            continue
        samples = [records[k].imu for k in range(i, j)]
        label = compute_label(samples, window)
        feature = np.empty(INPUT_DIM)
        feature[:26] = feats[0]
        feature[26] = r.state.speed / SPEED_NORM
        out.append(Experience(feature=feature, label=label, task_id=task_id,
                              timestamp=r.t))
    return out


def _nll_grads(params, X, y):
    return backprop(params, TrainBatch(inputs=X, targets=y), loss_kind="nll")


def default_layer_sizes(hidden=DEFAULT_HIDDEN):
    return [INPUT_DIM, *hidden, 2]


def train_baseline(experiences, epochs: int, lr: float, rng,
                   layer_sizes=None, batch_size: int = 64,
                   loss_log=None) -> MlpParams:
    """Pooled NLL training with shuffled minibatch Adam.

    If loss_log is a list, the full-batch NLL after each epoch is appended
    to it (training-curve hook; does not affect the optimization path).
    """
    if len(experiences) == 0:
        raise ValueError("no experiences")
    layer_sizes = layer_sizes or default_layer_sizes()
    X = np.stack([e.feature for e in experiences])
    y = np.array([e.label for e in experiences])
    params = init_params(layer_sizes, rng)
    state = AdamState.zeros(params)
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for lo in range(0, len(X), batch_size):
            sel = order[lo:lo + batch_size]
            grads = _nll_grads(params, X[sel], y[sel])
            params, state = adam_step(params, grads, state, lr)
        if loss_log is not None:
            loss_log.append(batch_loss(params, TrainBatch(X, y), "nll"))
    return params


def meta_train(tasks, cfg: MetaConfig, rng, layer_sizes=None,
               loss_log=None, init: MlpParams = None) -> MlpParams:
    """First-order MAML over terrain tasks.

    Per outer iteration: sample meta_batch_tasks tasks; per task run
    cfg.inner_steps full-batch SGD steps on a fresh support split, take the
    NLL gradient on the query split at the adapted parameters, and apply
    Adam to the mean of those query gradients. Second-order terms are
    dropped (gradients w.r.t. the adapted parameters stand in for gradients
    w.r.t. the initialization). If loss_log is a list, the mean query NLL
    at the adapted parameters is appended per outer iteration.

    The first-order objective only scores post-adaptation loss, so from a
    random start the initialization itself can drift to badly calibrated
    predictions. Passing a pooled-pretrained `init` anchors the start
    where zero-shot predictions are already sensible.
    """
    tasks = [t for t in tasks if t.meta_eligible]
    if len(tasks) < 2:
        raise ValueError("meta-training needs at least 2 eligible tasks")
    layer_sizes = list(init.layer_sizes) if init is not None \
        else (layer_sizes or default_layer_sizes())
    data = [(t.features(), t.labels()) for t in tasks]
    params = init if init is not None else init_params(layer_sizes, rng)
    state = AdamState.zeros(params)
    for _ in range(cfg.epochs):
        picks = rng.choice(len(tasks), size=cfg.meta_batch_tasks,
                           replace=len(tasks) < cfg.meta_batch_tasks)
        mean_ws = [np.zeros_like(w) for w in params.weights]
        mean_bs = [np.zeros_like(b) for b in params.biases]
        qloss = 0.0
        for ti in picks:
            X, y = data[ti]
            perm = rng.permutation(len(X))
            n_sup = max(1, int(round(cfg.support_frac * len(X))))
            n_sup = min(n_sup, len(X) - 1)  # keep the query split non-empty
            sup, qry = perm[:n_sup], perm[n_sup:]
            adapted = params
            for _ in range(cfg.inner_steps):
                grads = clip_grad_norm(_nll_grads(adapted, X[sup], y[sup]),
                                       ADAPT_GRAD_CLIP)
                adapted = sgd_step(adapted, grads, cfg.inner_lr)
            d_ws, d_bs = _nll_grads(adapted, X[qry], y[qry])
            for k in range(len(mean_ws)):
                mean_ws[k] += d_ws[k] / len(picks)
                mean_bs[k] += d_bs[k] / len(picks)
            if loss_log is not None:
                qloss += batch_loss(adapted, TrainBatch(X[qry], y[qry]),
                                    "nll") / len(picks)
        if loss_log is not None:
            loss_log.append(qloss)
        params, state = adam_step(params, (mean_ws, mean_bs), state,
                                  cfg.outer_lr)
    return params


def adapt(params: MlpParams, support, steps: int, lr: float) -> MlpParams:
    """Norm-clipped full-batch SGD on NLL over the support set."""
    if len(support) == 0:
        raise ValueError("empty support set")
    X = np.stack([e.feature for e in support])
    y = np.array([e.label for e in support])
    for _ in range(steps):
        grads = clip_grad_norm(_nll_grads(params, X, y), ADAPT_GRAD_CLIP)
        params = sgd_step(params, grads, lr)
    return params


def eval_mse(params: MlpParams, experiences) -> float:
    """Mean-head squared error against labels; the variance head is not
    scored here."""
    if len(experiences) == 0:
        raise ValueError("empty evaluation set")
    X = np.stack([e.feature for e in experiences])
    y = np.array([e.label for e in experiences])
    mean, _ = forward_gaussian_batch(params, X)
    return float(np.mean((mean - y) ** 2))


def recalibrate_mean_head(params: MlpParams, experiences) -> MlpParams:
    """Refit the output mean row by least squares on a dataset.

    The first-order meta objective scores only post-adaptation loss, so
    meta-training is free to park the initialization at systematically
    offset zero-shot predictions (adaptation removes them in a step or
    two, at no cost to the objective; in practice the offset grows with
    speed). Given the frozen trunk the mean output is linear in its final
    row, so the dataset-optimal row has a closed form. Refitting it on the
    training pool restores zero-shot calibration and leaves the variance
    head and the trunk, where the adaptation behaviour lives, untouched.
    """
    if len(experiences) == 0:
        raise ValueError("empty calibration set")
    X = np.stack([e.feature for e in experiences])
    y = np.array([e.label for e in experiences])
    h = X
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ w.T + b)
    A = np.concatenate([h, np.ones((len(h), 1))], axis=1)
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    weights = [np.array(w) for w in params.weights]
    biases = [np.array(b) for b in params.biases]
    weights[-1] = weights[-1].copy()
    biases[-1] = biases[-1].copy()
    weights[-1][0, :] = sol[:-1]
    biases[-1][0] = sol[-1]
    return MlpParams(list(params.layer_sizes), weights, biases)


def support_nll(params: MlpParams, experiences) -> float:
    return batch_loss(params, stack_batch(experiences), loss_kind="nll")


def predict_cost_map(params: MlpParams, grid: ElevationGrid, speed: float,
                     heading: float = 0.0, center=None, radius=None,
                     chunk: int = 4096) -> CostMap:
    """Learned cost map over every cell with an extractable patch.

    cost_mean = clamp(mean head, 0, 1); cost_std = exp(log_var/2). Cells
    without patch coverage stay unknown, as do cells outside the optional
    (center, radius) window.
    """
    s = grid.size
    ox, oy = grid.origin
    cx = ox + (np.arange(s) + 0.5) * grid.resolution
    cy = oy + (np.arange(s) + 0.5) * grid.resolution
    XX, YY = np.meshgrid(cx, cy, indexing="ij")
    candidate = grid.n_obs > 0
    if center is not None and radius is not None:
        candidate &= (XX - center[0]) ** 2 + (YY - center[1]) ** 2 <= radius ** 2
    idx = np.nonzero(candidate)
    out = CostMap.unknown_like(grid)
    if len(idx[0]) == 0:
        return out
    xs, ys = XX[idx], YY[idx]
    feats, valid = extract_patch_batch(grid, xs, ys, heading)
    rows = np.nonzero(valid)[0]
    if len(rows) == 0:
        return out
    inputs = np.empty((len(rows), INPUT_DIM))
    inputs[:, :26] = feats[rows]
    inputs[:, 26] = speed / SPEED_NORM
    means = np.empty(len(rows))
    stds = np.empty(len(rows))
    for lo in range(0, len(rows), chunk):
        m, lv = forward_gaussian_batch(params, inputs[lo:lo + chunk])
        means[lo:lo + chunk] = m
        stds[lo:lo + chunk] = np.exp(0.5 * lv)
    ixs, iys = idx[0][rows], idx[1][rows]
    out.cost_mean[ixs, iys] = np.clip(means, 0.0, 1.0)
    out.cost_std[ixs, iys] = stds
    out.known[ixs, iys] = 1
    return out


class OnlineAdapter:
    """Ring-buffered periodic adaptation during a run.

    The sim loop pushes experiences; maybe_adapt publishes a fresh
    parameter snapshot every t_adapt seconds of sim time once the buffer
    holds at least min_buffer experiences. Single writer; readers take
    .params, which is always a complete immutable snapshot.
    """

    def __init__(self, params: MlpParams, capacity: int = 512,
                 t_adapt: float = 2.0, min_buffer: int = 32,
                 recent: int = 128, steps: int = 3, lr: float = 0.01):
        self.params = params
        self.capacity = capacity
        self.t_adapt = t_adapt
        self.min_buffer = min_buffer
        self.recent = recent
        self.steps = steps
        self.lr = lr
        self.buffer = []
        self.last_adapt_time = None
        self.n_adaptations = 0

    def add_experience(self, exp: Experience) -> None:
        self.buffer.append(exp)
        if len(self.buffer) > self.capacity:
            del self.buffer[:len(self.buffer) - self.capacity]

    def maybe_adapt(self, now: float):
        """Run one adaptation if due; returns new params or None."""
        if len(self.buffer) < self.min_buffer:
            return None
        if self.last_adapt_time is not None and \
                now - self.last_adapt_time < self.t_adapt:
            return None
        support = self.buffer[-self.recent:]
        self.params = adapt(self.params, support, self.steps, self.lr)
        self.last_adapt_time = now
        self.n_adaptations += 1
        return self.params
