"""Vehicle dynamics on rough terrain plus LiDAR/IMU sensor models.

The vehicle is a kinematic bicycle in the plane with a 3-DOF spring-damper
suspension (z, roll, pitch) driven by the terrain heights under the four
wheel contact points. Cheap by design: it produces exactly the motion
channels the experiments measure (vertical velocity/acceleration, roll and
pitch acceleration).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .terrain import HeightField

STEER_LIMIT = 0.5     # rad
ACCEL_LIMIT = 3.0     # m/s^2
ROLLOVER_ANGLE = 0.6  # rad; |roll| or |pitch| beyond this ends the episode


@dataclass(frozen=True)
class VehicleParams:
    """Declared constants of the simulated vehicle (not calibrated)."""

    wheelbase: float = 3.0
    half_track: float = 0.9
    suspension_omega: float = 8.0   # rad/s natural frequency
    suspension_zeta: float = 0.6

    @classmethod
    def from_dict(cls, doc: dict) -> "VehicleParams":
        return cls(**doc)


@dataclass(frozen=True)
class ControlInput:
    """Steering angle (rad) and longitudinal acceleration command (m/s^2)."""

    steering: float = 0.0
    accel_cmd: float = 0.0

    def clamped(self) -> "ControlInput":
        return ControlInput(
            steering=min(max(self.steering, -STEER_LIMIT), STEER_LIMIT),
            accel_cmd=min(max(self.accel_cmd, -ACCEL_LIMIT), ACCEL_LIMIT),
        )


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    z: float = 0.0
    z_vel: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    roll_rate: float = 0.0
    pitch_rate: float = 0.0
    terminal: bool = False

    def to_dict(self) -> dict:
        return {
            "x": self.x, "y": self.y, "heading": self.heading, "speed": self.speed,
            "z": self.z, "z_vel": self.z_vel, "roll": self.roll, "pitch": self.pitch,
            "roll_rate": self.roll_rate, "pitch_rate": self.pitch_rate,
            "terminal": self.terminal,
        }


@dataclass(frozen=True)
class ImuSample:
    z_acc: float
    roll_acc: float
    pitch_acc: float
    timestamp: float

    def to_dict(self) -> dict:
        return {"z_acc": self.z_acc, "roll_acc": self.roll_acc,
                "pitch_acc": self.pitch_acc, "timestamp": self.timestamp}


@dataclass(frozen=True)
class SensorConfig:
    max_range: float = 20.0
    samples_per_scan: int = 2000
    noise_std: float = 0.02
    dropout: float = 0.05

    @classmethod
    def from_dict(cls, doc: dict) -> "SensorConfig":
        return cls(**doc)


@dataclass
class PointCloud:
    """World-frame ground points plus the vehicle state they were taken from."""

    points: np.ndarray  # (n, 3)
    sensor_pose: VehicleState


def bicycle_step(x: float, y: float, heading: float, speed: float,
                 steering: float, accel: float, dt: float, wheelbase: float):
    """One planar kinematic-bicycle step.

    Update order is speed, then heading, then position, each using the value
    just computed; the planner's rollout kernel replicates this exactly.
    """
    speed = max(speed + accel * dt, 0.0)
    heading = heading + speed * math.tan(steering) / wheelbase * dt
    x = x + speed * math.cos(heading) * dt
    y = y + speed * math.sin(heading) * dt
    return x, y, heading, speed


def wheel_heights(field: HeightField, x: float, y: float, heading: float,
                  params: VehicleParams) -> np.ndarray:
    """Terrain heights under FL, FR, RL, RR wheel contact points.

    Contacts feel the full surface including any sub-cell texture layer,
    unlike the ranging sensor which resolves only the base surface.
    """
    hw = 0.5 * params.wheelbase
    ht = params.half_track
    bx = np.array([hw, hw, -hw, -hw])
    by = np.array([ht, -ht, ht, -ht])
    c, s = math.cos(heading), math.sin(heading)
    return field.contact_height_batch(x + c * bx - s * by, y + s * bx + c * by)


def terrain_pose_targets(field: HeightField, x: float, y: float, heading: float,
                         params: VehicleParams):
    """Least-squares ground plane through the four wheel heights.

    Returns (z, roll, pitch) targets; roll/pitch are slope angles along the
    body left/forward axes.
    """
    h = wheel_heights(field, x, y, heading, params)
    hw = 0.5 * params.wheelbase
    ht = params.half_track
    # orthogonal design: closed-form least squares
    a = ((h[0] + h[1]) - (h[2] + h[3])) / (4.0 * hw)   # slope along body x
    b = ((h[0] + h[2]) - (h[1] + h[3])) / (4.0 * ht)   # slope along body y
    z = float(np.mean(h))
    return z, math.atan(b), math.atan(a)


def step_dynamics(state: VehicleState, control: ControlInput, field: HeightField,
                  dt: float, params: VehicleParams = VehicleParams(),
                  t: float = 0.0):
    """Advance the vehicle one step; returns (new state, IMU sample).

    dt must lie in (0, 0.05]. The vertical/attitude channels track the local
    ground plane with spring-damper second-order dynamics; the returned IMU
    sample reports the accelerations applied this step.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must be in (0, 0.05], got {dt}")
    control = control.clamped()
    x, y, heading, speed = bicycle_step(
        state.x, state.y, state.heading, state.speed,
        control.steering, control.accel_cmd, dt, params.wheelbase)

    z_t, roll_t, pitch_t = terrain_pose_targets(field, x, y, heading, params)
    w = params.suspension_omega
    damp = 2.0 * params.suspension_zeta * w

    z_acc = w * w * (z_t - state.z) - damp * state.z_vel
    roll_acc = w * w * (roll_t - state.roll) - damp * state.roll_rate
    pitch_acc = w * w * (pitch_t - state.pitch) - damp * state.pitch_rate

    z_vel = state.z_vel + z_acc * dt
    roll_rate = state.roll_rate + roll_acc * dt
    pitch_rate = state.pitch_rate + pitch_acc * dt
    z = state.z + z_vel * dt
    roll = state.roll + roll_rate * dt
    pitch = state.pitch + pitch_rate * dt

    new = VehicleState(
        x=x, y=y, heading=heading, speed=speed,
        z=z, z_vel=z_vel, roll=roll, pitch=pitch,
        roll_rate=roll_rate, pitch_rate=pitch_rate,
        terminal=state.terminal or abs(roll) >= ROLLOVER_ANGLE
        or abs(pitch) >= ROLLOVER_ANGLE,
    )
    imu = ImuSample(z_acc=z_acc, roll_acc=roll_acc, pitch_acc=pitch_acc,
                    timestamp=t + dt)
    return new, imu


def settle_state(field: HeightField, x: float, y: float, heading: float,
                 speed: float = 0.0,
                 params: VehicleParams = VehicleParams()) -> VehicleState:
    """State resting on the local ground plane (no suspension transient)."""
    z, roll, pitch = terrain_pose_targets(field, x, y, heading, params)
    return VehicleState(x=x, y=y, heading=heading, speed=speed,
                        z=z, roll=roll, pitch=pitch)


def sample_lidar(field: HeightField, state: VehicleState, cfg: SensorConfig,
                 rng: np.random.Generator) -> PointCloud:
    """Ground points at polar offsets around the vehicle.

    Angles are uniform; range density grows linearly with range (uniform
    areal density). Each return carries Gaussian height noise and is dropped
    independently with the dropout probability. Occlusion is not modelled.
    """
    n = cfg.samples_per_scan
    ang = rng.uniform(0.0, 2.0 * math.pi, n)
    rad = cfg.max_range * np.sqrt(rng.uniform(0.0, 1.0, n))
    noise = rng.normal(0.0, cfg.noise_std, n) if cfg.noise_std > 0 else np.zeros(n)
    keep = rng.uniform(0.0, 1.0, n) >= cfg.dropout
    px = state.x + rad * np.cos(ang)
    py = state.y + rad * np.sin(ang)
    pz = field.height_batch(px, py) + noise
    pts = np.column_stack([px[keep], py[keep], pz[keep]])
    return PointCloud(points=pts, sensor_pose=state)


@dataclass
class StepRecord:
    """One row of the trajectory log."""

    t: float
    state: VehicleState
    control: ControlInput
    imu: ImuSample

    def to_json(self) -> str:
        return json.dumps({
            "t": self.t,
            "state": self.state.to_dict(),
            "control": {"steering": self.control.steering,
                        "accel_cmd": self.control.accel_cmd},
            "imu": self.imu.to_dict(),
        })

    @classmethod
    def from_json(cls, line: str) -> "StepRecord":
        doc = json.loads(line)
        st = doc["state"]
        return cls(
            t=doc["t"],
            state=VehicleState(**st),
            control=ControlInput(**doc["control"]),
            imu=ImuSample(**doc["imu"]),
        )
