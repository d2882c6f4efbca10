"""Minimal dense feedforward network with hand-written reverse-mode gradients.

Shared by the traversability cost model and the dynamics ensemble. Hidden
layers use tanh; the output layer is linear. Networks used for cost
prediction carry a (mean, log-variance) Gaussian head; dynamics members use
the raw output vector. Parameters are plain numpy arrays frozen after
construction so they can be treated as immutable snapshots and cloned
cheaply by meta-learning inner loops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 4.0
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ShapeError(ValueError):
    """Input dimension does not match the network."""


@dataclass(frozen=True)
class GaussianPrediction:
    """Predicted label distribution: mean and log of the variance."""

    mean: float
    log_var: float

    @property
    def std(self) -> float:
        return math.exp(0.5 * self.log_var)


class MlpParams:
    """Weights and biases of a dense MLP.

    weights[l] has shape (layer_sizes[l+1], layer_sizes[l]); biases[l] has
    shape (layer_sizes[l+1],). Arrays are copied on construction and marked
    read-only: updates always build a new MlpParams.
    """

    __slots__ = ("layer_sizes", "weights", "biases")

    def __init__(self, layer_sizes, weights, biases):
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2 or any(s <= 0 for s in layer_sizes):
            raise ValueError(f"need >=2 positive layer sizes, got {layer_sizes}")
        if len(weights) != len(layer_sizes) - 1 or len(biases) != len(layer_sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer transition")
        ws, bs = [], []
        for l, (w, b) in enumerate(zip(weights, biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (layer_sizes[l + 1], layer_sizes[l]):
                raise ValueError(
                    f"weight {l} shape {w.shape} != {(layer_sizes[l + 1], layer_sizes[l])}"
                )
            if b.shape != (layer_sizes[l + 1],):
                raise ValueError(f"bias {l} shape {b.shape} != {(layer_sizes[l + 1],)}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"non-finite entries in layer {l}")
            w.flags.writeable = False
            b.flags.writeable = False
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "layer_sizes", layer_sizes)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    def __setattr__(self, name, value):
        raise AttributeError("MlpParams is immutable")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass
class TrainBatch:
    """A batch of feature vectors and regression targets.

    targets is (B,) for scalar labels or (B, n_out) for vector regression.
    """

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] == 0:
            raise ValueError("inputs must be a non-empty (B, n_in) array")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ValueError("inputs and targets disagree on batch size")
        if not (np.isfinite(self.inputs).all() and np.isfinite(self.targets).all()):
            raise ValueError("non-finite batch entries")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def init_params(layer_sizes, rng: np.random.Generator, scale: float = 1.0) -> MlpParams:
    """Gaussian init with std scale/sqrt(fan_in), zero biases."""
    ws, bs = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        ws.append(rng.standard_normal((n_out, n_in)) * (scale / math.sqrt(n_in)))
        bs.append(np.zeros(n_out))
    return MlpParams(layer_sizes, ws, bs)


def zeros_like_params(params: MlpParams):
    """Gradient accumulator shaped like params: (list of dW, list of db)."""
    return ([np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases])


def forward_raw(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Raw network output; x is (n_in,) or (B, n_in), output matches."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != params.n_in:
        raise ShapeError(f"input width {a.shape[1]} != {params.n_in}")
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        if l != last:
            a = np.tanh(a)
    return a[0] if single else a


def forward_gaussian_batch(params: MlpParams, X: np.ndarray):
    """(mean, clamped log-variance) arrays for a 2-output network."""
    if params.n_out != 2:
        raise ShapeError("gaussian head requires exactly 2 outputs")
    out = forward_raw(params, np.atleast_2d(X))
    return out[:, 0], np.clip(out[:, 1], LOG_VAR_MIN, LOG_VAR_MAX)


def mlp_forward(params: MlpParams, x) -> GaussianPrediction:
    """Run the network on one feature vector and split the Gaussian head."""
    mean, log_var = forward_gaussian_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return GaussianPrediction(float(mean[0]), float(log_var[0]))


def gaussian_nll(pred: GaussianPrediction, target: float) -> float:
    """0.5 * (log_var + (target - mean)^2 * exp(-log_var)); constant dropped."""
    r = target - pred.mean
    return 0.5 * (pred.log_var + r * r * math.exp(-pred.log_var))


def _forward_trace(params: MlpParams, X: np.ndarray):
    """Forward pass keeping activations for backprop."""
    acts = [X]
    a = X
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w.T + b
        if l != last:
            a = np.tanh(a)
        acts.append(a)
    return acts


def _output_grad(params: MlpParams, out: np.ndarray, targets: np.ndarray, loss_kind: str):
    """Loss value and dLoss/d(raw output), mean-over-batch convention."""
    B = out.shape[0]
    if loss_kind == "nll":
        if params.n_out != 2:
            raise ShapeError("nll loss requires a 2-output gaussian head")
        if targets.ndim != 1:
            raise ShapeError("nll targets must be scalars")
        raw_lv = out[:, 1]
        lv = np.clip(raw_lv, LOG_VAR_MIN, LOG_VAR_MAX)
        inv_var = np.exp(-lv)
        r = targets - out[:, 0]
        loss = 0.5 * np.mean(lv + r * r * inv_var)
        g = np.zeros_like(out)
        g[:, 0] = -r * inv_var / B
        # clamp passes gradient only strictly inside its bounds
        inside = (raw_lv > LOG_VAR_MIN) & (raw_lv < LOG_VAR_MAX)
        g[:, 1] = np.where(inside, 0.5 * (1.0 - r * r * inv_var) / B, 0.0)
        return loss, g
    if loss_kind == "mse":
        t = targets[:, None] if targets.ndim == 1 else targets
        if t.shape[1] != params.n_out:
            raise ShapeError(f"mse target width {t.shape[1]} != {params.n_out}")
        r = out - t
        loss = float(np.mean(np.sum(r * r, axis=1)))
        return loss, 2.0 * r / B
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def batch_loss(params: MlpParams, batch: TrainBatch, loss_kind: str = "nll") -> float:
    out = forward_raw(params, batch.inputs)
    loss, _ = _output_grad(params, out, batch.targets, loss_kind)
    return float(loss)


def backprop(params: MlpParams, batch: TrainBatch, loss_kind: str = "nll"):
    """Exact mean-over-batch gradients of the selected loss.

    Returns (d_weights, d_biases) lists shaped like params.
    """
    acts = _forward_trace(params, batch.inputs)
    _, g = _output_grad(params, acts[-1], batch.targets, loss_kind)
    d_ws = [None] * len(params.weights)
    d_bs = [None] * len(params.biases)
    for l in range(len(params.weights) - 1, -1, -1):
        d_ws[l] = g.T @ acts[l]
        d_bs[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ params.weights[l]) * (1.0 - acts[l] ** 2)
    return d_ws, d_bs


@dataclass
class AdamState:
    """First/second moment accumulators plus step counter."""

    t: int
    m_w: list
    v_w: list
    m_b: list
    v_b: list

    @classmethod
    def zeros(cls, params: MlpParams) -> "AdamState":
        return cls(
            t=0,
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
        )


def adam_step(params: MlpParams, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns (new params, new state)."""
    d_ws, d_bs = grads
    t = state.t + 1
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    new_ws, new_bs = [], []
    m_w, v_w, m_b, v_b = [], [], [], []
    for w, b, dw, db, mw, vw, mb, vb in zip(
        params.weights, params.biases, d_ws, d_bs,
        state.m_w, state.v_w, state.m_b, state.v_b,
    ):
        mw = ADAM_BETA1 * mw + (1.0 - ADAM_BETA1) * dw
        vw = ADAM_BETA2 * vw + (1.0 - ADAM_BETA2) * dw * dw
        mb = ADAM_BETA1 * mb + (1.0 - ADAM_BETA1) * db
        vb = ADAM_BETA2 * vb + (1.0 - ADAM_BETA2) * db * db
        new_ws.append(w - lr * (mw / c1) / (np.sqrt(vw / c2) + ADAM_EPS))
        new_bs.append(b - lr * (mb / c1) / (np.sqrt(vb / c2) + ADAM_EPS))
        m_w.append(mw)
        v_w.append(vw)
        m_b.append(mb)
        v_b.append(vb)
    new_params = MlpParams(params.layer_sizes, new_ws, new_bs)
    return new_params, AdamState(t=t, m_w=m_w, v_w=v_w, m_b=m_b, v_b=v_b)


def sgd_step(params: MlpParams, grads, lr: float) -> MlpParams:
    """Plain gradient descent step, used by meta-learning inner loops."""
    d_ws, d_bs = grads
    return MlpParams(
        params.layer_sizes,
        [w - lr * dw for w, dw in zip(params.weights, d_ws)],
        [b - lr * db for b, db in zip(params.biases, d_bs)],
    )


def clip_grad_norm(grads, max_norm: float):
    """Rescale a (weights, biases) gradient pair onto a global-norm ball.

    NLL gradients scale with the inverse predicted variance, so a
    well-trained (tight-variance) network can see gradients orders of
    magnitude too large for a fixed SGD step; clipping keeps the inner
    adaptation loops stable without touching the descent direction.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    d_ws, d_bs = grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in (*d_ws, *d_bs)))
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return ([w * scale for w in d_ws], [b * scale for b in d_bs])


def finite_diff_check(params: MlpParams, batch: TrainBatch, eps: float,
                      loss_kind: str = "nll") -> float:
    """Max relative error between backprop and central finite differences.

    Error metric per entry: |g_a - g_n| / max(1, |g_a|, |g_n|).
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    d_ws, d_bs = backprop(params, batch, loss_kind)

    ws = [w.copy() for w in params.weights]
    bs = [b.copy() for b in params.biases]

    def loss_at() -> float:
        return batch_loss(MlpParams(params.layer_sizes, ws, bs), batch, loss_kind)

    worst = 0.0
    for arrays, grads in ((ws, d_ws), (bs, d_bs)):
        for arr, g in zip(arrays, grads):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = loss_at()
                flat[i] = orig - eps
                lo = loss_at()
                flat[i] = orig
                g_n = (hi - lo) / (2.0 * eps)
                g_a = gflat[i]
                err = abs(g_a - g_n) / max(1.0, abs(g_a), abs(g_n))
                if err > worst:
                    worst = err
    return worst


def params_to_dict(params: MlpParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(doc: dict) -> MlpParams:
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return MlpParams(doc["layer_sizes"], doc["weights"], doc["biases"])


def save_params(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path) -> MlpParams:
    return params_from_dict(json.loads(Path(path).read_text()))
