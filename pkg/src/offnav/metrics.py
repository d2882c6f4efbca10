"""Benchmark metrics: per-method navigation rows, MSE rows, CSV writers.

Motion statistics are the mean and maximum of |value| per channel,
aggregated over every timestep of every trial of a method.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

NAV_COLUMNS = [
    "method", "success_count", "trials",
    "mean_vertical_vel", "max_vertical_vel",
    "mean_vertical_acc", "max_vertical_acc",
    "mean_roll_acc", "max_roll_acc",
    "mean_pitch_acc", "max_pitch_acc",
]
MSE_COLUMNS = ["model", "task", "adaptation", "mse"]

STAT_KEYS = NAV_COLUMNS[3:]


@dataclass
class NavRow:
    method: str
    success_count: int
    trials: int
    mean_vertical_vel: float
    max_vertical_vel: float
    mean_vertical_acc: float
    max_vertical_acc: float
    mean_roll_acc: float
    max_roll_acc: float
    mean_pitch_acc: float
    max_pitch_acc: float

    def __post_init__(self):
        if not 0 <= self.success_count <= self.trials:
            raise ValueError("success_count must lie in [0, trials]")
        for key in STAT_KEYS:
            if getattr(self, key) < 0.0:
                raise ValueError(f"{key} must be >= 0")
        for chan in ("vertical_vel", "vertical_acc", "roll_acc", "pitch_acc"):
            if getattr(self, f"max_{chan}") < getattr(self, f"mean_{chan}"):
                raise ValueError(f"max_{chan} < mean_{chan}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in NAV_COLUMNS}

    @classmethod
    def from_dict(cls, doc: dict) -> "NavRow":
        return cls(**{k: doc[k] for k in NAV_COLUMNS})


@dataclass
class MseRow:
    model: str
    task: str
    adaptation: str
    mse: float

    def __post_init__(self):
        if self.mse < 0.0:
            raise ValueError("mse must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in MSE_COLUMNS}

    @classmethod
    def from_dict(cls, doc: dict) -> "MseRow":
        return cls(**{k: doc[k] for k in MSE_COLUMNS})


@dataclass
class MetricsReport:
    nav_rows: list
    mse_rows: list

    def to_dict(self) -> dict:
        return {"nav": [r.to_dict() for r in self.nav_rows],
                "mse": [r.to_dict() for r in self.mse_rows]}

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        return cls(nav_rows=[NavRow.from_dict(d) for d in doc["nav"]],
                   mse_rows=[MseRow.from_dict(d) for d in doc["mse"]])


def motion_stats(z_vel, z_acc, roll_acc, pitch_acc) -> dict:
    """Mean/max of |value| per channel; empty logs give all zeros."""
    out = {}
    for key, values in (("vertical_vel", z_vel), ("vertical_acc", z_acc),
                        ("roll_acc", roll_acc), ("pitch_acc", pitch_acc)):
        mag = np.abs(np.asarray(values, dtype=np.float64))
        out[f"mean_{key}"] = float(mag.mean()) if mag.size else 0.0
        out[f"max_{key}"] = float(mag.max()) if mag.size else 0.0
    return out


def write_nav_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NAV_COLUMNS)
        for r in rows:
            w.writerow([getattr(r, k) for k in NAV_COLUMNS])


def write_mse_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MSE_COLUMNS)
        for r in rows:
            w.writerow([getattr(r, k) for k in MSE_COLUMNS])


def read_mse_csv(path):
    with open(path, newline="") as fh:
        return [MseRow(model=d["model"], task=d["task"],
                       adaptation=d["adaptation"], mse=float(d["mse"]))
                for d in csv.DictReader(fh)]


def save_report_json(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
