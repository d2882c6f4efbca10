"""Scenario orchestration: collection, training, evaluation, navigation.

Every operation takes a ScenarioConfig and a run directory and writes its
artifacts under a fixed layout:

    logs/         per-task experience + transition JSONL
    checkpoints/  baseline.json, meta.json, ensemble.json, curves.csv
    eval/         mse_table.csv
    nav/<method>/ nav_row.json, trajectories/trial_<k>.jsonl
    adapt/        adaptation_report.json, trajectories/
    report/       nav_table.csv, mse_table.csv, summary.json

Seeding: the master seed fans out through SeedSequence([master, component,
index, ...]) so every trial and task draws from an independent stream and
adding trials never perturbs earlier ones.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    Ensemble,
    EnsembleConfig,
    ExplorationSim,
    Transition,
    explore_action,
    load_transitions,
    save_transitions,
    state_features,
    train_ensemble,
)
from .mapping import (
    CostMap,
    ElevationGrid,
    PatchUnavailableError,
    elevation_cost_map,
    extract_patch,
    extract_patch_batch,
    integrate_pointcloud,
    recenter,
    slope_cost_map,
)
from .metrics import (
    MetricsReport,
    MseRow,
    NavRow,
    motion_stats,
    read_mse_csv,
    save_report_json,
    write_mse_csv,
    write_nav_csv,
)
from .mppi import PlanarState, Plan, mppi_step
from .nn import forward_gaussian_batch, load_params, save_params
from .scenario import ScenarioConfig
from .simulate import (
    ACCEL_LIMIT,
    STEER_LIMIT,
    ControlInput,
    StepRecord,
    sample_lidar,
    settle_state,
    step_dynamics,
)
from .terrain import generate_terrain
from .traversability import (
    Experience,
    INPUT_DIM,
    LABEL_WINDOW,
    OnlineAdapter,
    SPEED_NORM,
    TaskDataset,
    adapt,
    attach_labels,
    compute_label,
    eval_mse,
    meta_train,
    predict_cost_map,
    recalibrate_mean_head,
    train_baseline,
)

DT = 0.02
LIDAR_EVERY = 5          # sim steps between scans (10 Hz at dt = 0.02)
SNAPSHOT_EVERY = 25      # sim steps between grid snapshots while collecting
REBUILD_EVERY = 20       # sim steps between cost-map rebuilds while driving
RETRAIN_EVERY = 512      # transitions between in-loop ensemble retrains
COSTMAP_RADIUS = 13.0    # m, learned cost-map window radius
MAP_LOOKAHEAD = 8.0      # m ahead of the vehicle the window is centred
MAP_SPEED_FLOOR = 3.0    # m/s, minimum speed the learned map is built for
ADAPT_STRIDE = 2         # sim steps between online-adaptation patch samples
SPAWN_SPEED = 2.0        # m/s at the start of a navigation trial
NAV_GRID_SIZE = 240      # 60 m map window so goals stay inside the grid
WARMUP_SCANS = 10        # scans taken at the spawn before moving off
EXPLORE_CANDIDATES = 64
SWEEP_PERIOD = 6.0       # s per full up-down pass of the speed reference
SWEEP_SPEED = (1.0, 8.5)  # m/s envelope the excitation sweep covers
SWEEP_GAIN = 4.0         # proportional gain tracking the speed reference
BASELINE_LR = 1e-3
EVAL_SUPPORT = 128       # held-out experiences used as adaptation support
EVAL_ADAPT_STEPS = 5

C_COLLECT, C_TRAIN, C_EVAL, C_NAV, C_ADAPT = 1, 2, 3, 4, 5

METHODS = ("elevation", "slope", "ours", "ours-adapt")
METHOD_ID = {m: i for i, m in enumerate(METHODS)}


def component_rng(master: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, *key]))


def save_experiences(experiences, path) -> None:
    with open(path, "w") as fh:
        for e in experiences:
            fh.write(e.to_json() + "\n")


def load_experiences(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(Experience.from_json(line))
    return out


# ---------------------------------------------------------------------------
# collection


def sweep_ref(t: float) -> float:
    """Triangle-wave speed reference the collection excitation tracks."""
    lo, hi = SWEEP_SPEED
    phase = (t % SWEEP_PERIOD) / SWEEP_PERIOD
    return lo + (hi - lo) * (2.0 * phase if phase < 0.5
                             else 2.0 - 2.0 * phase)


def sweep_accel(t: float, speed: float) -> float:
    """Acceleration command tracking the triangle-wave speed reference.

    Collection drives with this excitation so that every few seconds of
    log cover the whole operating speed range. Any contiguous slice of
    experiences then sees roughly the same speed distribution as the full
    log, which keeps short adaptation windows representative of what they
    will be evaluated on.
    """
    return float(np.clip(SWEEP_GAIN * (sweep_ref(t) - speed), -ACCEL_LIMIT,
                         ACCEL_LIMIT))


def collect_task(field_, sc: ScenarioConfig, task_id: int, rng,
                 mode: str = "active", budget: int = None,
                 ens_cfg: EnsembleConfig = None):
    """Drive one terrain with the exploration policy, mapping as we go.

    Returns (experiences, transitions). Active mode retrains a scratch
    ensemble every RETRAIN_EVERY transitions and picks the
    max-disagreement candidate action; until the first retrain (and always
    in passive mode) steering is uniform random and acceleration follows
    the speed-sweep excitation.
    """
    if mode not in ("active", "passive"):
        raise ValueError(f"unknown exploration mode {mode!r}")
    budget = sc.collect_budget if budget is None else budget
    sim = ExplorationSim(field_, vehicle=sc.vehicle, dt=DT,
                         episode_steps=400)
    records, snapshots, transitions = [], [], []
    if budget == 0:
        return [], []

    def respawn(t):
        s = sim.reset(rng)
        if mode == "passive":
            # Spawn at the reference speed so the sweep stays continuous
            # across episode boundaries (no catch-up transients).
            s = settle_state(field_, s.x, s.y, s.heading, sweep_ref(t),
                             sc.vehicle)
        return s

    state = respawn(0.0)
    grid = ElevationGrid(center=(state.x, state.y))
    # A few scans before moving off so the very first records already
    # have a known map patch under them and make it into the log.
    for _ in range(3):
        grid = integrate_pointcloud(
            grid, sample_lidar(field_, state, sc.sensor, rng))
    ens = None
    t, ep_steps = 0.0, 0
    for k in range(budget):
        if k % LIDAR_EVERY == 0:
            grid = recenter(grid, (state.x, state.y))
            grid = integrate_pointcloud(
                grid, sample_lidar(field_, state, sc.sensor, rng))
        if k % SNAPSHOT_EVERY == 0:
            snapshots.append((t, grid))
        if mode == "active" and ens is not None:
            control = explore_action(ens, state_features(state),
                                     EXPLORE_CANDIDATES, rng)
        else:
            control = ControlInput(rng.uniform(-STEER_LIMIT, STEER_LIMIT),
                                   sweep_accel(t, state.speed))
        nxt, imu = sim.step(state, control, t)
        records.append(StepRecord(t, state, control, imu))
        transitions.append(Transition.from_states(state, control, nxt))
        t += DT
        ep_steps += 1
        if nxt.terminal or ep_steps >= sim.episode_steps:
            state = respawn(t)
            ep_steps = 0
        else:
            state = nxt
        if (mode == "active" and len(transitions) % RETRAIN_EVERY == 0
                and len(transitions) >= 256):
            ens = train_ensemble(transitions, ens_cfg or EnsembleConfig(),
                                 rng)
    return attach_labels(records, snapshots, task_id), transitions


def run_collect(sc: ScenarioConfig, out_root) -> dict:
    """Exploration driving on every train and held-out task; writes logs."""
    log_dir = os.path.join(out_root, "logs")
    os.makedirs(log_dir, exist_ok=True)
    manifest = {"train": [], "heldout": []}
    for i, spec in enumerate(sc.train_tasks):
        rng = component_rng(sc.seed, C_COLLECT, 0, i)
        exps, trans = collect_task(generate_terrain(spec), sc, i, rng)
        epath = os.path.join(log_dir, f"experiences_task{i}.jsonl")
        tpath = os.path.join(log_dir, f"transitions_task{i}.jsonl")
        save_experiences(exps, epath)
        save_transitions(trans, tpath)
        manifest["train"].append({"task_id": i, "experiences": len(exps),
                                  "transitions": len(trans)})
    for i, spec in enumerate(sc.heldout_tasks):
        rng = component_rng(sc.seed, C_COLLECT, 1, i)
        # Held-out logs use the passive excitation policy throughout, so
        # adaptation support windows and the evaluation remainder come
        # from one stationary driving distribution.
        exps, _ = collect_task(generate_terrain(spec), sc, 100 + i, rng,
                               mode="passive")
        epath = os.path.join(log_dir, f"experiences_heldout{i}.jsonl")
        save_experiences(exps, epath)
        manifest["heldout"].append({"task_id": 100 + i,
                                    "experiences": len(exps)})
    with open(os.path.join(log_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# training


def run_train(sc: ScenarioConfig, out_root) -> dict:
    """Train the pooled baseline, the meta model, and the dynamics ensemble."""
    log_dir = os.path.join(out_root, "logs")
    ckpt_dir = os.path.join(out_root, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    tasks, pooled, transitions = [], [], []
    for i in range(len(sc.train_tasks)):
        epath = os.path.join(log_dir, f"experiences_task{i}.jsonl")
        tpath = os.path.join(log_dir, f"transitions_task{i}.jsonl")
        if not (os.path.exists(epath) and os.path.exists(tpath)):
            raise FileNotFoundError(f"missing collection logs for task {i}; "
                                    "run collect first")
        exps = load_experiences(epath)
        pooled.extend(exps)
        if exps:
            tasks.append(TaskDataset(i, exps))
        transitions.extend(load_transitions(tpath))
    bl_curve, meta_curve = [], []
    baseline = train_baseline(pooled, epochs=sc.meta.epochs, lr=BASELINE_LR,
                              rng=component_rng(sc.seed, C_TRAIN, 0),
                              loss_log=bl_curve)
    # The first-order meta objective only scores post-adaptation loss, so
    # the meta model starts from the pooled pretrain to keep its zero-shot
    # predictions calibrated while the outer loop shapes adaptability, and
    # the finished model's mean row is refit on the training pool (the
    # outer loop leaves a systematic zero-shot offset behind).
    meta = meta_train(tasks, sc.meta, component_rng(sc.seed, C_TRAIN, 1),
                      loss_log=meta_curve, init=baseline)
    meta = recalibrate_mean_head(meta, pooled)
    ensemble = train_ensemble(transitions, EnsembleConfig(),
                              component_rng(sc.seed, C_TRAIN, 2))
    save_params(baseline, os.path.join(ckpt_dir, "baseline.json"))
    save_params(meta, os.path.join(ckpt_dir, "meta.json"))
    ensemble.save(os.path.join(ckpt_dir, "ensemble.json"))
    with open(os.path.join(ckpt_dir, "curves.csv"), "w") as fh:
        fh.write("model,epoch,loss\n")
        for name, curve in (("baseline", bl_curve), ("meta", meta_curve)):
            for e, v in enumerate(curve):
                fh.write(f"{name},{e},{v!r}\n")
    return {"experiences": len(pooled), "transitions": len(transitions),
            "tasks": len(tasks)}


# ---------------------------------------------------------------------------
# MSE evaluation


def run_eval_mse(sc: ScenarioConfig, out_root):
    """Held-out MSE for baseline, meta, and support-adapted meta."""
    log_dir = os.path.join(out_root, "logs")
    ckpt_dir = os.path.join(out_root, "checkpoints")
    eval_dir = os.path.join(out_root, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    for name in ("baseline.json", "meta.json"):
        if not os.path.exists(os.path.join(ckpt_dir, name)):
            raise FileNotFoundError(f"missing checkpoint {name}; run train")
    baseline = load_params(os.path.join(ckpt_dir, "baseline.json"))
    meta = load_params(os.path.join(ckpt_dir, "meta.json"))
    rows = []
    for i in range(len(sc.heldout_tasks)):
        epath = os.path.join(log_dir, f"experiences_heldout{i}.jsonl")
        if not os.path.exists(epath):
            raise FileNotFoundError(f"missing held-out log {epath}")
        exps = load_experiences(epath)
        if len(exps) <= EVAL_SUPPORT:
            raise ValueError(f"held-out task {i} has {len(exps)} experiences;"
                             f" need > {EVAL_SUPPORT} for a disjoint split")
        support, evalset = exps[:EVAL_SUPPORT], exps[EVAL_SUPPORT:]
        task = f"heldout{i}"
        rows.append(MseRow("baseline", task, "none",
                           eval_mse(baseline, evalset)))
        rows.append(MseRow("meta", task, "none", eval_mse(meta, evalset)))
        adapted = adapt(meta, support, EVAL_ADAPT_STEPS, sc.meta.inner_lr)
        rows.append(MseRow("meta", task, "adapted",
                           eval_mse(adapted, evalset)))
    write_mse_csv(rows, os.path.join(eval_dir, "mse_table.csv"))
    return rows


# ---------------------------------------------------------------------------
# navigation


@dataclass
class EpisodeResult:
    success: bool
    reason: str                 # success | rollover | timeout
    n_steps: int
    sim_time: float
    z_vel: np.ndarray
    z_acc: np.ndarray
    roll_acc: np.ndarray
    pitch_acc: np.ndarray
    trajectory: list
    waypoint_hits: list = field(default_factory=list)   # (ordinal, step, t)
    params_timeline: list = field(default_factory=list)  # (step, params)
    n_adaptations: int = 0
    grid: ElevationGrid = None


def _build_cost_map(method: str, grid: ElevationGrid, params, state):
    if method == "elevation":
        return elevation_cost_map(grid)
    if method == "slope":
        return slope_cost_map(grid)
    # learned map: a window ahead of the vehicle so rollout tails stay
    # inside it (unknown-cell penalties would otherwise reward circling)
    cx = state.x + MAP_LOOKAHEAD * math.cos(state.heading)
    cy = state.y + MAP_LOOKAHEAD * math.sin(state.heading)
    return predict_cost_map(params, grid,
                            speed=max(state.speed, MAP_SPEED_FLOOR),
                            heading=state.heading,
                            center=(cx, cy),
                            radius=COSTMAP_RADIUS)


def run_episode(field_, sc: ScenarioConfig, method: str, rng,
                waypoints=None, params=None, ensemble=None,
                timeout: float = None) -> EpisodeResult:
    """One closed-loop navigation trial.

    Spawns at the first waypoint and chases the rest in order; success is
    capturing the last one within the timeout without a rollover. For
    `ours-adapt`, an OnlineAdapter ingests labelled patches while driving
    and republishes parameters every couple of seconds.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    wps = [(float(x), float(y)) for x, y in (waypoints or sc.waypoints)]
    targets = wps[1:]
    cfg = sc.mppi
    control_every = max(1, int(round(cfg.dt / DT)))
    heading0 = math.atan2(targets[0][1] - wps[0][1],
                          targets[0][0] - wps[0][0])
    state = settle_state(field_, wps[0][0], wps[0][1], heading0, SPAWN_SPEED,
                         sc.vehicle)
    grid = ElevationGrid(center=(state.x, state.y), size=NAV_GRID_SIZE)
    for _ in range(WARMUP_SCANS):
        grid = integrate_pointcloud(
            grid, sample_lidar(field_, state, sc.sensor, rng))
    cost_map = CostMap.unknown_like(grid)
    adapter = OnlineAdapter(params) if method == "ours-adapt" else None
    cur_params = params
    plan = Plan.zeros(cfg.horizon)
    control = ControlInput(0.0, 0.0)
    wp_i = 0
    max_steps = int(round((timeout if timeout is not None else sc.timeout)
                          / DT))
    z_vel, z_acc, roll_acc, pitch_acc, traj = [], [], [], [], []
    result = EpisodeResult(False, "timeout", 0, 0.0, None, None, None, None,
                           traj)
    if adapter is not None:
        result.params_timeline.append((-1, cur_params))
    pending, imu_hist = [], []
    map_dirty = True
    success = False
    reason = "timeout"
    k = 0
    for k in range(max_steps):
        t = k * DT
        if k % LIDAR_EVERY == 0:
            grid = recenter(grid, (state.x, state.y))
            grid = integrate_pointcloud(
                grid, sample_lidar(field_, state, sc.sensor, rng))
            map_dirty = True
        if map_dirty and k % REBUILD_EVERY == 0:
            cost_map = _build_cost_map(method, grid, cur_params, state)
            map_dirty = False
        goal = targets[wp_i]
        if k % control_every == 0:
            control, plan = mppi_step(
                PlanarState(state.x, state.y, state.heading, state.speed),
                plan, cost_map, ensemble, cfg, rng, goal=goal)
        nxt, imu = step_dynamics(state, control, field_, DT, sc.vehicle, t)
        z_vel.append(nxt.z_vel)
        z_acc.append(imu.z_acc)
        roll_acc.append(imu.roll_acc)
        pitch_acc.append(imu.pitch_acc)
        traj.append({"t": round(t, 6), "x": nxt.x, "y": nxt.y,
                     "heading": nxt.heading, "speed": nxt.speed, "z": nxt.z,
                     "roll": nxt.roll, "pitch": nxt.pitch, "wp": wp_i})
        if adapter is not None:
            imu_hist.append((t, imu))
            if len(imu_hist) > 80:
                del imu_hist[:len(imu_hist) - 80]
            if k % ADAPT_STRIDE == 0:
                try:
                    patch = extract_patch(grid, state.x, state.y,
                                          state.heading)
                    feat = np.empty(INPUT_DIM)
                    feat[:26] = patch
                    feat[26] = state.speed / SPEED_NORM
                    pending.append((t, feat))
                except PatchUnavailableError:
                    pass
            while pending and t >= pending[0][0] + LABEL_WINDOW:
                t0, feat = pending.pop(0)
                window = [s for ts, s in imu_hist
                          if t0 <= ts < t0 + LABEL_WINDOW]
                if window:
                    adapter.add_experience(Experience(
                        feature=feat, label=compute_label(window),
                        task_id=-1, timestamp=t0))
            if adapter.maybe_adapt(t) is not None:
                cur_params = adapter.params
                result.params_timeline.append((k, cur_params))
                map_dirty = True
        state = nxt
        if state.terminal:
            reason = "rollover"
            k += 1
            break
        if math.hypot(state.x - goal[0],
                      state.y - goal[1]) <= sc.waypoint_radius:
            result.waypoint_hits.append((wp_i, k, t))
            wp_i += 1
            if wp_i == len(targets):
                success = True
                reason = "success"
                k += 1
                break
    else:
        k = max_steps
    result.success = success
    result.reason = reason
    result.n_steps = k
    result.sim_time = k * DT
    result.z_vel = np.array(z_vel)
    result.z_acc = np.array(z_acc)
    result.roll_acc = np.array(roll_acc)
    result.pitch_acc = np.array(pitch_acc)
    result.n_adaptations = adapter.n_adaptations if adapter else 0
    result.grid = grid
    return result


def _write_trajectory(rows, path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def run_navigate(sc: ScenarioConfig, method: str, out_root) -> NavRow:
    """All trials of one method on the race track; writes nav/<method>/."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    ckpt_dir = os.path.join(out_root, "checkpoints")
    nav_dir = os.path.join(out_root, "nav", method)
    traj_dir = os.path.join(nav_dir, "trajectories")
    os.makedirs(traj_dir, exist_ok=True)
    params = ensemble = None
    if method in ("ours", "ours-adapt"):
        mpath = os.path.join(ckpt_dir, "meta.json")
        epath = os.path.join(ckpt_dir, "ensemble.json")
        if not (os.path.exists(mpath) and os.path.exists(epath)):
            raise FileNotFoundError("missing meta/ensemble checkpoints; "
                                    "run train first")
        params = load_params(mpath)
        ensemble = Ensemble.load(epath)
    field_ = generate_terrain(sc.race_track)
    successes = 0
    outcomes = []
    zv, za, ra, pa = [], [], [], []
    for trial in range(sc.trials):
        rng = component_rng(sc.seed, C_NAV, METHOD_ID[method], trial)
        res = run_episode(field_, sc, method, rng, params=params,
                          ensemble=ensemble)
        successes += int(res.success)
        outcomes.append({"trial": trial, "reason": res.reason,
                         "sim_time": res.sim_time,
                         "n_adaptations": res.n_adaptations})
        zv.append(res.z_vel)
        za.append(res.z_acc)
        ra.append(res.roll_acc)
        pa.append(res.pitch_acc)
        _write_trajectory(res.trajectory,
                          os.path.join(traj_dir, f"trial_{trial}.jsonl"))
    stats = motion_stats(np.concatenate(zv), np.concatenate(za),
                         np.concatenate(ra), np.concatenate(pa))
    row = NavRow(method=method, success_count=successes, trials=sc.trials,
                 **stats)
    with open(os.path.join(nav_dir, "nav_row.json"), "w") as fh:
        json.dump({"row": row.to_dict(), "outcomes": outcomes}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    return row


# ---------------------------------------------------------------------------
# bump adaptation scenario


def _bump_mask(xs, ys, bumps, margin: float = 2.0):
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    mask = np.zeros(xs.shape, dtype=bool)
    for b in bumps:
        d = np.hypot(xs - b.center[0], ys - b.center[1])
        mask |= d <= b.radius + margin
    return mask


def predicted_bump_cost(params, grid: ElevationGrid, bumps,
                        speed: float) -> float:
    """Mean predicted cost over known cells inside the bump footprints."""
    s = grid.size
    ox, oy = grid.origin
    cx = ox + (np.arange(s) + 0.5) * grid.resolution
    cy = oy + (np.arange(s) + 0.5) * grid.resolution
    XX, YY = np.meshgrid(cx, cy, indexing="ij")
    sel = (grid.n_obs > 0) & _bump_mask(XX, YY, bumps, margin=0.0)
    idx = np.nonzero(sel)
    if len(idx[0]) == 0:
        return float("nan")
    feats, valid = extract_patch_batch(grid, XX[idx], YY[idx], 0.0)
    rows = np.nonzero(valid)[0]
    if len(rows) == 0:
        return float("nan")
    inputs = np.empty((len(rows), INPUT_DIM))
    inputs[:, :26] = feats[rows]
    inputs[:, 26] = speed / SPEED_NORM
    mean, _ = forward_gaussian_batch(params, inputs)
    return float(np.clip(mean, 0.0, 1.0).mean())


def run_adaptation_scenario(sc: ScenarioConfig, out_root,
                            strict: bool = False) -> dict:
    """Two laps of the unknown-bump circuit with online adaptation.

    Reports per-lap mean |z_acc| over bump segments and the predicted
    bump-cell cost under the parameters each lap started with. With
    strict=True a missing lap-2 cost increase raises.
    """
    ckpt_dir = os.path.join(out_root, "checkpoints")
    adapt_dir = os.path.join(out_root, "adapt")
    traj_dir = os.path.join(adapt_dir, "trajectories")
    os.makedirs(traj_dir, exist_ok=True)
    mpath = os.path.join(ckpt_dir, "meta.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError("missing meta checkpoint; run train first")
    params = load_params(mpath)
    epath = os.path.join(ckpt_dir, "ensemble.json")
    ensemble = Ensemble.load(epath) if os.path.exists(epath) else None
    field_ = generate_terrain(sc.adaptation_track)
    lap = list(sc.adaptation_waypoints)
    lap_targets = lap[1:] + [lap[0]]
    wps = [lap[0]] + lap_targets + lap_targets
    rng = component_rng(sc.seed, C_ADAPT, 0)
    res = run_episode(field_, sc, "ours-adapt", rng, waypoints=wps,
                      params=params, ensemble=ensemble,
                      timeout=2.2 * sc.timeout)
    _write_trajectory(res.trajectory,
                      os.path.join(traj_dir, "trial_0.jsonl"))
    n_lap = len(lap_targets)
    boundary = next((step for ordinal, step, _ in res.waypoint_hits
                     if ordinal == n_lap - 1), res.n_steps)
    xs = np.array([r["x"] for r in res.trajectory])
    ys = np.array([r["y"] for r in res.trajectory])
    on_bump = _bump_mask(xs, ys, sc.adaptation_track.bumps)
    laps = []
    for lo, hi in ((0, boundary + 1), (boundary + 1, len(xs))):
        seg = on_bump[lo:hi]
        acc = np.abs(res.z_acc[lo:hi][seg])
        # a lap that never comes near a bump felt nothing from them
        laps.append({"bump_steps": int(seg.sum()),
                     "mean_abs_z_acc_bump":
                         float(acc.mean()) if acc.size else 0.0})
    params_lap2 = params
    for step, p in res.params_timeline:
        if step <= boundary:
            params_lap2 = p
    cost1 = predicted_bump_cost(params, res.grid, sc.adaptation_track.bumps,
                                sc.mppi.target_speed)
    cost2 = predicted_bump_cost(params_lap2, res.grid,
                                sc.adaptation_track.bumps,
                                sc.mppi.target_speed)
    cost_up = bool(cost2 > cost1)
    acc_down = bool(laps[1]["mean_abs_z_acc_bump"]
                    <= laps[0]["mean_abs_z_acc_bump"])
    report = {
        "success": res.success,
        "reason": res.reason,
        "n_adaptations": res.n_adaptations,
        "laps": laps,
        "predicted_bump_cost": {"lap1": cost1, "lap2": cost2},
        "cost_increased": cost_up,
        "bump_acc_decreased": acc_down,
    }
    with open(os.path.join(adapt_dir, "adaptation_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if strict and not cost_up:
        raise RuntimeError("adaptation did not raise the predicted bump "
                           f"cost ({cost1} -> {cost2})")
    return report


# ---------------------------------------------------------------------------
# report assembly


def gather_metrics(out_root) -> MetricsReport:
    nav_rows = []
    for method in METHODS:
        path = os.path.join(out_root, "nav", method, "nav_row.json")
        if os.path.exists(path):
            with open(path) as fh:
                nav_rows.append(NavRow.from_dict(json.load(fh)["row"]))
    mse_path = os.path.join(out_root, "eval", "mse_table.csv")
    mse_rows = read_mse_csv(mse_path) if os.path.exists(mse_path) else []
    return MetricsReport(nav_rows=nav_rows, mse_rows=mse_rows)


def write_report(report: MetricsReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_nav_csv(report.nav_rows, os.path.join(out_dir, "nav_table.csv"))
    write_mse_csv(report.mse_rows, os.path.join(out_dir, "mse_table.csv"))
    save_report_json(report, os.path.join(out_dir, "summary.json"))
