"""Ensemble dynamics model: epistemic uncertainty and active exploration.

K small MLPs predict the one-step change of normalized vehicle state
features from (state features, action). Members are trained on independent
bootstrap resamples from independent initializations; the population
variance of their predictions ("disagreement") quantifies epistemic
uncertainty. Disagreement drives greedy action selection during data
collection and penalizes uncertain state-action regions in planning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import (
    AdamState,
    MlpParams,
    TrainBatch,
    adam_step,
    backprop,
    forward_raw,
    init_params,
    params_from_dict,
    params_to_dict,
)
from .simulate import (
    ACCEL_LIMIT,
    STEER_LIMIT,
    ControlInput,
    VehicleParams,
    VehicleState,
    settle_state,
    step_dynamics,
)

STATE_DIM = 6
ACTION_DIM = 2
SPEED_NORM = 10.0
RATE_NORM = 5.0
Z_VEL_NORM = 5.0
DEFAULT_CANDIDATES = 64


def state_features(state: VehicleState) -> np.ndarray:
    """Normalized 6-vector: speed, roll, pitch, rates, vertical velocity."""
    return np.array([
        state.speed / SPEED_NORM,
        state.roll,
        state.pitch,
        state.roll_rate / RATE_NORM,
        state.pitch_rate / RATE_NORM,
        state.z_vel / Z_VEL_NORM,
    ])


def action_features(control: ControlInput) -> np.ndarray:
    return np.array([control.steering / STEER_LIMIT,
                     control.accel_cmd / ACCEL_LIMIT])


@dataclass
class Transition:
    """(state features, action, next-step feature delta) sample."""

    state_features: np.ndarray
    action: np.ndarray
    next_delta: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.state_features, dtype=np.float64)
        a = np.asarray(self.action, dtype=np.float64)
        d = np.asarray(self.next_delta, dtype=np.float64)
        if s.shape != (STATE_DIM,) or a.shape != (ACTION_DIM,) \
                or d.shape != (STATE_DIM,):
            raise ValueError("bad transition shapes")
        if not (np.isfinite(s).all() and np.isfinite(a).all()
                and np.isfinite(d).all()):
            raise ValueError("transition must be finite")
        self.state_features, self.action, self.next_delta = s, a, d

    @classmethod
    def from_states(cls, state, control, next_state) -> "Transition":
        f0 = state_features(state)
        return cls(state_features=f0, action=action_features(control),
                   next_delta=state_features(next_state) - f0)

    def to_json(self) -> str:
        return json.dumps({"state_features": self.state_features.tolist(),
                           "action": self.action.tolist(),
                           "next_delta": self.next_delta.tolist()})

    @classmethod
    def from_json(cls, line: str) -> "Transition":
        d = json.loads(line)
        return cls(np.array(d["state_features"]), np.array(d["action"]),
                   np.array(d["next_delta"]))


@dataclass(frozen=True)
class EnsembleConfig:
    n_members: int = 5
    hidden: tuple = (16, 16)
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    d_ref_quantile: float = 0.95

    def __post_init__(self):
        if self.n_members < 2:
            raise ValueError("ensemble needs at least 2 members")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 < self.d_ref_quantile <= 1.0:
            raise ValueError("d_ref_quantile must be in (0, 1]")


@dataclass
class Ensemble:
    """Immutable once built; queries are side-effect free."""

    members: list
    member_seeds: list
    d_ref: float

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("ensemble needs at least 2 members")
        topo = self.members[0].layer_sizes
        if any(m.layer_sizes != topo for m in self.members):
            raise ValueError("members must share topology")
        if not self.d_ref > 0:
            raise ValueError("d_ref must be positive")

    def to_dict(self) -> dict:
        return {"members": [params_to_dict(m) for m in self.members],
                "member_seeds": list(self.member_seeds),
                "d_ref": self.d_ref}

    @classmethod
    def from_dict(cls, doc: dict) -> "Ensemble":
        return cls(members=[params_from_dict(d) for d in doc["members"]],
                   member_seeds=list(doc["member_seeds"]),
                   d_ref=float(doc["d_ref"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Ensemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _stack_inputs(transitions):
    X = np.stack([np.concatenate([t.state_features, t.action])
                  for t in transitions])
    Y = np.stack([t.next_delta for t in transitions])
    return X, Y


def _member_disagreement(members, inputs: np.ndarray) -> np.ndarray:
    preds = np.stack([forward_raw(m, inputs) for m in members])
    return preds.var(axis=0, ddof=0).mean(axis=-1)


def disagreement_batch(ensemble: Ensemble, inputs: np.ndarray) -> np.ndarray:
    """Mean over output dims of the across-member population variance."""
    return _member_disagreement(ensemble.members,
                                np.asarray(inputs, dtype=np.float64))


def predict_disagreement(ensemble: Ensemble, state_feats, action) -> float:
    x = np.concatenate([np.asarray(state_feats, dtype=np.float64),
                        np.asarray(action, dtype=np.float64)])
    return float(disagreement_batch(ensemble, x[None])[0])


def train_ensemble(transitions, cfg: EnsembleConfig, rng) -> Ensemble:
    """Bootstrap-train K members with MSE; store the disagreement scale.

    d_ref is the cfg.d_ref_quantile quantile of disagreement over the full
    training set, used later to normalize uncertainty penalties.
    """
    if len(transitions) < 256:
        raise ValueError("need at least 256 transitions to train")
    X, Y = _stack_inputs(transitions)
    layer_sizes = [STATE_DIM + ACTION_DIM, *cfg.hidden, STATE_DIM]
    members, seeds = [], []
    for _ in range(cfg.n_members):
        seed = int(rng.integers(0, 2**31 - 1))
        seeds.append(seed)
        mrng = np.random.default_rng(seed)
        pick = mrng.integers(0, len(X), len(X))
        Xb, Yb = X[pick], Y[pick]
        params = init_params(layer_sizes, mrng)
        state = AdamState.zeros(params)
        for _ in range(cfg.epochs):
            order = mrng.permutation(len(Xb))
            for lo in range(0, len(Xb), cfg.batch_size):
                sel = order[lo:lo + cfg.batch_size]
                grads = backprop(params,
                                 TrainBatch(inputs=Xb[sel], targets=Yb[sel]),
                                 loss_kind="mse")
                params, state = adam_step(params, grads, state, cfg.lr)
        members.append(params)
    d = _member_disagreement(members, X)
    d_ref = max(float(np.quantile(d, cfg.d_ref_quantile)), 1e-12)
    return Ensemble(members=members, member_seeds=seeds, d_ref=d_ref)


def explore_action(ensemble: Ensemble, state_feats, n_candidates: int,
                   rng) -> ControlInput:
    """Greedy one-step exploration: most-disagreed-upon candidate action."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    steer = rng.uniform(-STEER_LIMIT, STEER_LIMIT, n_candidates)
    accel = rng.uniform(-ACCEL_LIMIT, ACCEL_LIMIT, n_candidates)
    feats = np.empty((n_candidates, STATE_DIM + ACTION_DIM))
    feats[:, :STATE_DIM] = np.asarray(state_feats, dtype=np.float64)
    feats[:, STATE_DIM] = steer / STEER_LIMIT
    feats[:, STATE_DIM + 1] = accel / ACCEL_LIMIT
    d = disagreement_batch(ensemble, feats)
    best = int(np.argmax(d))  # argmax takes the lowest index on ties
    return ControlInput(float(steer[best]), float(accel[best]))


def uncertainty_penalty(ensemble: Ensemble, state_feats, actions) -> float:
    """Sum over steps of clamp(disagreement / d_ref, 0, 1)."""
    state_feats = np.asarray(state_feats, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if state_feats.ndim != 2 or len(state_feats) == 0:
        raise ValueError("rollout must be a non-empty (T, 6) array")
    feats = np.concatenate([state_feats, actions], axis=-1)
    d = disagreement_batch(ensemble, feats)
    return float(np.sum(np.clip(d / ensemble.d_ref, 0.0, 1.0)))


def uncertainty_penalty_batch(ensemble: Ensemble, state_feats,
                              actions) -> np.ndarray:
    """Vectorized over N rollouts: (N, T, 6) and (N, T, 2) -> (N,)."""
    state_feats = np.asarray(state_feats, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    N, T = state_feats.shape[:2]
    feats = np.concatenate([state_feats, actions], axis=-1)
    d = disagreement_batch(ensemble, feats.reshape(N * T, -1)).reshape(N, T)
    return np.sum(np.clip(d / ensemble.d_ref, 0.0, 1.0), axis=1)


class ExplorationSim:
    """Episodic rough-terrain rollouts for dynamics data collection.

    Episodes spawn settled at a uniform pose with a uniform initial speed
    and run for episode_steps or until rollover.
    """

    def __init__(self, field, vehicle: VehicleParams = None, dt: float = 0.02,
                 episode_steps: int = 200, spawn_extent: float = 20.0,
                 spawn_speed: tuple = (0.5, 9.0)):
        self.field = field
        self.vehicle = vehicle or VehicleParams()
        self.dt = dt
        self.episode_steps = episode_steps
        self.spawn_extent = spawn_extent
        self.spawn_speed = spawn_speed

    def reset(self, rng) -> VehicleState:
        x = rng.uniform(-self.spawn_extent, self.spawn_extent)
        y = rng.uniform(-self.spawn_extent, self.spawn_extent)
        heading = rng.uniform(0.0, 2.0 * np.pi)
        speed = rng.uniform(*self.spawn_speed)
        return settle_state(self.field, x, y, heading, speed, self.vehicle)

    def step(self, state, control, t=0.0):
        return step_dynamics(state, control, self.field, self.dt,
                             self.vehicle, t=t)


def collect_exploration_data(sim: ExplorationSim, ensemble, budget_steps: int,
                             mode: str, rng,
                             cfg: EnsembleConfig = None,
                             retrain_every: int = 512,
                             n_candidates: int = DEFAULT_CANDIDATES):
    """Gather `budget_steps` transitions in `active` or `random` mode.

    Active mode greedily maximizes ensemble disagreement and retrains the
    ensemble every retrain_every transitions; until an ensemble exists (none
    passed in and too little data to train one) it falls back to random
    actions. Random mode samples the action box uniformly. Deterministic
    for a given rng.
    """
    if budget_steps < 1:
        raise ValueError("budget_steps must be >= 1")
    if mode not in ("active", "random"):
        raise ValueError("mode must be 'active' or 'random'")
    cfg = cfg or EnsembleConfig()
    out = []
    state = sim.reset(rng)
    steps_in_episode = 0
    while len(out) < budget_steps:
        if mode == "active" and ensemble is not None:
            control = explore_action(ensemble, state_features(state),
                                     n_candidates, rng)
        else:
            control = ControlInput(
                float(rng.uniform(-STEER_LIMIT, STEER_LIMIT)),
                float(rng.uniform(-ACCEL_LIMIT, ACCEL_LIMIT)))
        next_state, _ = sim.step(state, control)
        out.append(Transition.from_states(state, control, next_state))
        steps_in_episode += 1
        if next_state.terminal or steps_in_episode >= sim.episode_steps:
            state = sim.reset(rng)
            steps_in_episode = 0
        else:
            state = next_state
        if mode == "active" and len(out) % retrain_every == 0 \
                and len(out) >= 256:
            ensemble = train_ensemble(out, cfg, rng)
    return out


def save_transitions(transitions, path) -> None:
    with open(path, "w") as fh:
        for t in transitions:
            fh.write(t.to_json() + "\n")


def load_transitions(path):
    with open(path) as fh:
        return [Transition.from_json(line) for line in fh if line.strip()]
