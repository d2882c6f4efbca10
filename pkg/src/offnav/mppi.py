"""Sampling-based model predictive controller over terrain cost maps.

Rollouts use the planar kinematic bicycle only (no suspension channels);
per-step running cost is

    q(x) = a1 * Track + a2 * Stable + a3 * Speed

with Track an unknown-terrain penalty, Stable the predicted cost mean plus
beta times its std, and Speed the squared relative offset from the target.
Learned-dynamics disagreement and an optional terminal goal-distance term
are added per trajectory. The plan update is the usual softmin-weighted
average of perturbed action sequences.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .simulate import ACCEL_LIMIT, STEER_LIMIT, ControlInput, bicycle_step

ACTION_LOW = np.array([-STEER_LIMIT, -ACCEL_LIMIT])
ACTION_HIGH = np.array([STEER_LIMIT, ACCEL_LIMIT])

PlanarState = namedtuple("PlanarState", "x y heading speed")


@dataclass(frozen=True)
class MppiConfig:
    horizon: int = 40
    n_samples: int = 512
    noise_std: tuple = (0.15, 1.0)          # (steering rad, accel m/s^2)
    temperature: float = 0.5
    alpha: tuple = (10.0, 5.0, 1.0)         # (track, stable, speed) weights
    target_speed: float = 8.333             # 30 km/h
    unknown_penalty: float = 10.0
    uncertainty_weight: float = 1.0         # beta, also scales Stable's std
    smoothness_weight: float = 0.1
    dt: float = 0.02
    wheelbase: float = 3.0
    goal_weight: float = 0.0                # terminal waypoint-distance weight

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if len(self.noise_std) != 2 or min(self.noise_std) <= 0:
            raise ValueError("noise_std must be two positive scales")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.target_speed <= 0:
            raise ValueError("target_speed must be > 0")


@dataclass
class Plan:
    """Nominal action sequence, (H, 2) array of (steering, accel)."""

    actions: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != 2:
            raise ValueError("plan actions must have shape (H, 2)")
        if np.any(a < ACTION_LOW - 1e-12) or np.any(a > ACTION_HIGH + 1e-12):
            raise ValueError("plan actions outside the action box")
        a = np.clip(a, ACTION_LOW, ACTION_HIGH)
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    @classmethod
    def zeros(cls, horizon: int) -> "Plan":
        return cls(np.zeros((horizon, 2)))

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def first_control(self) -> ControlInput:
        return ControlInput(float(self.actions[0, 0]), float(self.actions[0, 1]))


def softmin_weights(costs, temperature: float) -> np.ndarray:
    """exp(-(c - min c)/T), normalized. Invariant to uniform cost offsets."""
    costs = np.asarray(costs, dtype=np.float64)
    w = np.exp(-(costs - costs.min()) / temperature)
    return w / w.sum()


def running_cost(state, cost_map, ensemble, cfg: MppiConfig) -> float:
    """Per-step cost at a state; ensemble disagreement is charged per
    trajectory (see rollout), not here, so `ensemble` is unused."""
    a1, a2, a3 = cfg.alpha
    known, mean, std = cost_map.lookup(state.x, state.y)
    if known:
        track = 0.0
        stable = mean + cfg.uncertainty_weight * std
    else:
        track = cfg.unknown_penalty
        stable = 0.0
    dv = (state.speed - cfg.target_speed) / cfg.target_speed
    return a1 * track + a2 * stable + a3 * dv * dv


def _planar_features(speeds: np.ndarray, actions: np.ndarray):
    """Dynamics-model inputs for planar rollouts: attitude channels zero."""
    shape = speeds.shape
    state_feats = np.zeros(shape + (6,))
    state_feats[..., 0] = speeds / 10.0
    acts = np.empty(shape + (2,))
    acts[..., 0] = actions[..., 0] / STEER_LIMIT
    acts[..., 1] = actions[..., 1] / ACCEL_LIMIT
    return state_feats, acts


def rollout(start_state, action_seq, cost_map, ensemble, cfg: MppiConfig,
            goal=None):
    """Propagate one action sequence; return (trajectory, total_cost).

    trajectory is (H+1, 4) rows of (x, y, heading, speed) with row 0 the
    start. Cost = sum of running costs at visited states + smoothness +
    beta * ensemble disagreement penalty + optional goal distance.
    """
    actions = np.asarray(action_seq, dtype=np.float64)
    if actions.ndim != 2 or actions.shape != (cfg.horizon, 2):
        raise ValueError(f"action_seq must be ({cfg.horizon}, 2)")
    x, y = float(start_state.x), float(start_state.y)
    psi, v = float(start_state.heading), float(start_state.speed)
    traj = np.zeros((cfg.horizon + 1, 4))
    traj[0] = (x, y, psi, v)
    speeds = np.zeros(cfg.horizon)
    total = 0.0
    for t in range(cfg.horizon):
        speeds[t] = v
        x, y, psi, v = bicycle_step(x, y, psi, v, actions[t, 0], actions[t, 1],
                                    cfg.dt, cfg.wheelbase)
        traj[t + 1] = (x, y, psi, v)
        total += running_cost(PlanarState(x, y, psi, v), cost_map, None, cfg)
    if cfg.horizon > 1 and cfg.smoothness_weight != 0.0:
        d = np.diff(actions, axis=0)
        total += cfg.smoothness_weight * float(np.sum(d * d))
    if ensemble is not None and cfg.uncertainty_weight != 0.0:
        from .dynamics import uncertainty_penalty
        state_feats, acts = _planar_features(speeds, actions)
        total += cfg.uncertainty_weight * uncertainty_penalty(
            ensemble, state_feats, acts)
    if goal is not None and cfg.goal_weight != 0.0:
        total += cfg.goal_weight * float(np.hypot(x - goal[0], y - goal[1]))
    return traj, float(total)


def _batch_costs(state, perturbed, cost_map, ensemble, cfg, goal):
    a1, a2, a3 = cfg.alpha
    ox, oy = cost_map.origin
    costs, speeds, fx, fy = _kernels.rollout_batch(
        float(state.x), float(state.y), float(state.heading), float(state.speed),
        perturbed, cost_map.cost_mean, cost_map.cost_std, cost_map.known,
        ox, oy, cost_map.resolution, cfg.dt, cfg.wheelbase,
        a1, a2, a3, cfg.uncertainty_weight, cfg.unknown_penalty,
        cfg.target_speed, cfg.smoothness_weight)
    if ensemble is not None and cfg.uncertainty_weight != 0.0:
        from .dynamics import uncertainty_penalty_batch
        state_feats, acts = _planar_features(speeds, perturbed)
        costs = costs + cfg.uncertainty_weight * uncertainty_penalty_batch(
            ensemble, state_feats, acts)
    if goal is not None and cfg.goal_weight != 0.0:
        costs = costs + cfg.goal_weight * np.hypot(fx - goal[0], fy - goal[1])
    return costs


def mppi_step(state, prev_plan: Plan, cost_map, ensemble, cfg: MppiConfig,
              rng, goal=None, diag_out=None):
    """One planner update; returns (first control, new plan).

    Shifts the previous plan, perturbs it with clamped Gaussian noise,
    scores every sample, and softmin-averages. Bit-deterministic for a
    given rng state.
    """
    if prev_plan.horizon != cfg.horizon:
        raise ValueError("prev_plan horizon does not match config")
    shifted = np.vstack([prev_plan.actions[1:], prev_plan.actions[-1:]])
    noise = rng.standard_normal((cfg.n_samples, cfg.horizon, 2))
    noise *= np.asarray(cfg.noise_std)
    perturbed = np.clip(shifted[None] + noise, ACTION_LOW, ACTION_HIGH)
    costs = _batch_costs(state, perturbed, cost_map, ensemble, cfg, goal)
    w = softmin_weights(costs, cfg.temperature)
    new_actions = np.einsum("n,nhd->hd", w, perturbed)
    plan = Plan(np.clip(new_actions, ACTION_LOW, ACTION_HIGH))
    if diag_out is not None:
        diag_out["min_cost"] = float(costs.min())
        diag_out["mean_cost"] = float(costs.mean())
        diag_out["effective_sample_size"] = float(1.0 / np.sum(w * w))
    return plan.first_control(), plan
