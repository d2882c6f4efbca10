"""Experiment configuration.

One ScenarioConfig describes a full benchmark run: the terrain task
collections for data collection and held-out evaluation, the race track
and the bump-adaptation track, sensor and vehicle constants, training
hyperparameters, and the navigation controller settings. The default
scenario below is the desk-scale benchmark every CLI command runs unless
given a JSON config.

Terrain seeds are fixed inside the scenario: the tasks and tracks are the
benchmark itself. The `seed` field is the master seed for everything
stochastic in execution (exploration, sensor noise, training, MPPI).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .mppi import MppiConfig
from .simulate import SensorConfig, VehicleParams
from .terrain import Bump, TerrainSpec
from .traversability import MetaConfig


@dataclass(frozen=True)
class ScenarioConfig:
    train_tasks: tuple
    heldout_tasks: tuple
    race_track: TerrainSpec
    adaptation_track: TerrainSpec
    sensor: SensorConfig
    vehicle: VehicleParams
    meta: MetaConfig
    mppi: MppiConfig
    waypoints: tuple            # race course, first entry is the spawn point
    adaptation_waypoints: tuple  # one lap of the bump circuit, driven twice
    trials: int = 15
    seed: int = 0
    timeout: float = 45.0       # s of sim time per navigation trial
    collect_budget: int = 4200  # sim steps of exploration per task
    waypoint_radius: float = 6.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.waypoints) < 2:
            raise ValueError("need a spawn point and at least one waypoint")
        if len(self.adaptation_waypoints) < 2:
            raise ValueError("adaptation circuit needs at least 2 waypoints")
        if self.timeout <= 0.0:
            raise ValueError("timeout must be > 0")
        if self.collect_budget < 0:
            raise ValueError("collect_budget must be >= 0")
        if self.waypoint_radius <= 0.0:
            raise ValueError("waypoint_radius must be > 0")
        if not self.train_tasks or not self.heldout_tasks:
            raise ValueError("need at least one train and one held-out task")
        object.__setattr__(self, "train_tasks", tuple(self.train_tasks))
        object.__setattr__(self, "heldout_tasks", tuple(self.heldout_tasks))
        object.__setattr__(self, "waypoints",
                           tuple((float(x), float(y))
                                 for x, y in self.waypoints))
        object.__setattr__(self, "adaptation_waypoints",
                           tuple((float(x), float(y))
                                 for x, y in self.adaptation_waypoints))

    def to_dict(self) -> dict:
        return {
            "train_tasks": [t.to_dict() for t in self.train_tasks],
            "heldout_tasks": [t.to_dict() for t in self.heldout_tasks],
            "race_track": self.race_track.to_dict(),
            "adaptation_track": self.adaptation_track.to_dict(),
            "sensor": dataclasses.asdict(self.sensor),
            "vehicle": dataclasses.asdict(self.vehicle),
            "meta": dataclasses.asdict(self.meta),
            "mppi": {**dataclasses.asdict(self.mppi),
                     "noise_std": list(self.mppi.noise_std),
                     "alpha": list(self.mppi.alpha)},
            "waypoints": [list(w) for w in self.waypoints],
            "adaptation_waypoints": [list(w)
                                     for w in self.adaptation_waypoints],
            "trials": self.trials,
            "seed": self.seed,
            "timeout": self.timeout,
            "collect_budget": self.collect_budget,
            "waypoint_radius": self.waypoint_radius,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        mp = dict(doc["mppi"])
        mp["noise_std"] = tuple(mp["noise_std"])
        mp["alpha"] = tuple(mp["alpha"])
        return cls(
            train_tasks=tuple(TerrainSpec.from_dict(d)
                              for d in doc["train_tasks"]),
            heldout_tasks=tuple(TerrainSpec.from_dict(d)
                                for d in doc["heldout_tasks"]),
            race_track=TerrainSpec.from_dict(doc["race_track"]),
            adaptation_track=TerrainSpec.from_dict(doc["adaptation_track"]),
            sensor=SensorConfig.from_dict(doc["sensor"]),
            vehicle=VehicleParams.from_dict(doc["vehicle"]),
            meta=MetaConfig(**doc["meta"]),
            mppi=MppiConfig(**mp),
            waypoints=tuple(tuple(w) for w in doc["waypoints"]),
            adaptation_waypoints=tuple(tuple(w)
                                       for w in doc["adaptation_waypoints"]),
            trials=int(doc.get("trials", 15)),
            seed=int(doc.get("seed", 0)),
            timeout=float(doc.get("timeout", 45.0)),
            collect_budget=int(doc.get("collect_budget", 3400)),
            waypoint_radius=float(doc.get("waypoint_radius", 6.0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _task_bumps(corner: int):
    """Graded bump menu shared by every data-collection task.

    Cosine humps from mild to violent plus thin sharp-edged steps, so the
    cost model sees both smooth-broad and spiky-narrow geometry with
    matching vibration labels. Positions rotate by task so tasks do not
    share bump placement.
    """
    base = [
        Bump((12.0, 8.0), 0.25, 1.8, "cosine"),
        Bump((-10.0, 12.0), 0.45, 2.0, "cosine"),
        Bump((-14.0, -9.0), 0.6, 2.2, "cosine"),
        Bump((9.0, -13.0), 0.12, 1.2, "step"),
        Bump((2.0, 15.0), 0.18, 1.4, "step"),
        Bump((-4.0, -15.0), 0.15, 1.0, "step"),
    ]
    rot = [(1, 0), (0, 1), (-1, 0), (0, -1)][corner % 4]
    c, s = rot
    return tuple(Bump((c * b.center[0] - s * b.center[1],
                       s * b.center[0] + c * b.center[1]),
                      b.height, b.radius, b.profile) for b in base)


def _race_bumps():
    """Hazard belts across the race corridor.

    Each belt mixes low sharp steps (violent-sounding but harmless) with
    tall smooth humps (lethal near centre). Geometric cost maps rate the
    two classes almost identically; the vibration model separates them.
    Belts 2 and 4 put a tall hump on the centreline so every run has to
    choose what to cross.
    """
    step_rows = {15.0: (3, 5, 7), 75.0: (3, 5, 7),
                 45.0: (2, 4, 6, 8), 105.0: (2, 4, 6, 8)}
    bumps = []
    for bx, step_ks in step_rows.items():
        for k in range(11):
            by = -22.5 + 4.5 * k
            if k in step_ks:
                bumps.append(Bump((bx, by), 0.18, 1.3, "step"))
            else:
                bumps.append(Bump((bx, by), 1.3, 2.2, "cosine"))
    return tuple(bumps)


def default_scenario(seed: int = 0) -> ScenarioConfig:
    """The desk-scale benchmark.

    Tasks vary along two axes: visible roughness (amplitude/wavelength the
    map resolves) and micro texture (sub-cell, felt only through the
    suspension). The texture axis is what makes adaptation matter: patches
    look identical across tasks while vibration labels shift.
    """
    micro_train = [0.0, 0.04, 0.08, 0.12, 0.10, 0.02, 0.055, 0.09]
    micro_held = [0.02, 0.05, 0.09, 0.065, 0.035]
    train = tuple(
        TerrainSpec(seed=11 + i, roughness_amplitude=amp,
                    roughness_wavelength=wl, bumps=_task_bumps(i),
                    micro_amplitude=micro_train[i])
        for i, (amp, wl) in enumerate(
            [(0.02, 2.0), (0.05, 1.2), (0.08, 0.8), (0.05, 0.45),
             (0.035, 1.8), (0.065, 1.0), (0.025, 0.7), (0.07, 1.5)]))
    heldout = tuple(
        TerrainSpec(seed=21 + i, roughness_amplitude=amp,
                    roughness_wavelength=wl, bumps=_task_bumps(i + 1),
                    micro_amplitude=micro_held[i])
        for i, (amp, wl) in enumerate(
            [(0.03, 1.6), (0.06, 1.0), (0.075, 0.6), (0.045, 0.5),
             (0.025, 2.4)]))
    race = TerrainSpec(seed=31, roughness_amplitude=0.025,
                       roughness_wavelength=1.4, bumps=_race_bumps(),
                       extent=150.0, micro_amplitude=0.05)
    # The unknown-terrain track: long low-slope ramps read as mild terrain
    # on the map yet shake hard at speed, and the track texture is rougher
    # than anything the prior expects. Both surprises only show up in the
    # IMU, which is what online adaptation feeds on.
    adaptation = TerrainSpec(
        seed=41, roughness_amplitude=0.02, roughness_wavelength=1.6,
        bumps=(Bump((18.0, 0.0), 0.34, 4.5, "trapezoid"),
               Bump((36.0, 12.0), 0.30, 4.0, "trapezoid"),
               Bump((18.0, 24.0), 0.38, 5.0, "trapezoid")),
        extent=60.0, micro_amplitude=0.06)
    # The controller plans on a 0.1 s grid (each action held for 5 sim
    # steps): per-control-step noise then spreads the rollout fan enough
    # to steer, and a 20-step horizon looks 16 m ahead at cruise speed.
    nav_mppi = MppiConfig(horizon=20, n_samples=192, noise_std=(0.18, 1.0),
                          alpha=(10.0, 5.0, 4.0), smoothness_weight=0.02,
                          dt=0.1, goal_weight=1.0)
    return ScenarioConfig(
        train_tasks=train,
        heldout_tasks=heldout,
        race_track=race,
        adaptation_track=adaptation,
        sensor=SensorConfig(),
        vehicle=VehicleParams(),
        meta=MetaConfig(),
        mppi=nav_mppi,
        waypoints=((0.0, 0.0), (30.0, 0.0), (60.0, 0.0), (90.0, 0.0),
                   (120.0, 0.0)),
        adaptation_waypoints=((0.0, 0.0), (36.0, 0.0), (36.0, 24.0),
                              (0.0, 24.0)),
        trials=15,
        seed=seed,
    )
