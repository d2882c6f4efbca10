"""Robot-centric 2.5D elevation mapping and handcrafted cost-map baselines.

The elevation grid fuses LiDAR returns per cell with scalar Kalman updates.
Cells with no observations are *unknown* and consumers must treat them
explicitly; nothing here invents default heights or costs. Cost maps share
the grid geometry: per-cell cost mean in [0, 1], aleatoric std, known flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .simulate import PointCloud

DEFAULT_RESOLUTION = 0.25
DEFAULT_SIZE = 160
DEFAULT_MEAS_VAR = 0.0004   # m^2, lidar noise_std 0.02 squared
SLOPE_MAX = 0.4             # rad, full-cost slope angle
STEP_MAX = 0.25             # m, full-cost neighbour step height
PATCH_LEN = 26              # 5x5 rotated height patch + unknown fraction


class PatchUnavailableError(ValueError):
    """The cell under the requested patch centre has no observations."""


@dataclass
class ElevationGrid:
    """Square height grid; arrays indexed [ix, iy] with ix along world x."""

    center: tuple = (0.0, 0.0)
    resolution: float = DEFAULT_RESOLUTION
    size: int = DEFAULT_SIZE
    meas_var: float = DEFAULT_MEAS_VAR
    height_mean: np.ndarray = None
    height_var: np.ndarray = None
    n_obs: np.ndarray = None

    def __post_init__(self):
        if self.height_mean is None:
            self.height_mean = np.zeros((self.size, self.size))
            self.height_var = np.zeros((self.size, self.size))
            self.n_obs = np.zeros((self.size, self.size), dtype=np.int64)

    @property
    def origin(self) -> tuple:
        half = 0.5 * self.size * self.resolution
        return (self.center[0] - half, self.center[1] - half)

    @property
    def known(self) -> np.ndarray:
        return (self.n_obs > 0).astype(np.uint8)

    def cell_index(self, x: float, y: float):
        ox, oy = self.origin
        return (int(np.floor((x - ox) / self.resolution)),
                int(np.floor((y - oy) / self.resolution)))

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.size and 0 <= iy < self.size

    def cell_center(self, ix: int, iy: int):
        ox, oy = self.origin
        return (ox + (ix + 0.5) * self.resolution, oy + (iy + 0.5) * self.resolution)

    def copy(self) -> "ElevationGrid":
        return ElevationGrid(
            center=self.center, resolution=self.resolution, size=self.size,
            meas_var=self.meas_var, height_mean=self.height_mean.copy(),
            height_var=self.height_var.copy(), n_obs=self.n_obs.copy())

    def to_dict(self) -> dict:
        return {
            "center": list(self.center), "resolution": self.resolution,
            "size": self.size, "meas_var": self.meas_var,
            "height_mean": self.height_mean.ravel().tolist(),
            "height_var": self.height_var.ravel().tolist(),
            "n_obs": self.n_obs.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ElevationGrid":
        size = int(doc["size"])
        return cls(
            center=tuple(doc["center"]), resolution=float(doc["resolution"]),
            size=size, meas_var=float(doc.get("meas_var", DEFAULT_MEAS_VAR)),
            height_mean=np.array(doc["height_mean"]).reshape(size, size),
            height_var=np.array(doc["height_var"]).reshape(size, size),
            n_obs=np.array(doc["n_obs"], dtype=np.int64).reshape(size, size),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ElevationGrid":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CostMap:
    """Traversability cost field on the elevation-grid geometry."""

    center: tuple
    resolution: float
    size: int
    cost_mean: np.ndarray
    cost_std: np.ndarray
    known: np.ndarray  # uint8

    @property
    def origin(self) -> tuple:
        half = 0.5 * self.size * self.resolution
        return (self.center[0] - half, self.center[1] - half)

    @classmethod
    def unknown_like(cls, grid: ElevationGrid) -> "CostMap":
        s = grid.size
        return cls(center=grid.center, resolution=grid.resolution, size=s,
                   cost_mean=np.zeros((s, s)), cost_std=np.zeros((s, s)),
                   known=np.zeros((s, s), dtype=np.uint8))

    def lookup(self, x: float, y: float):
        """(known, cost_mean, cost_std) at a world point; outside map = unknown."""
        ox, oy = self.origin
        ix = int(np.floor((x - ox) / self.resolution))
        iy = int(np.floor((y - oy) / self.resolution))
        if not (0 <= ix < self.size and 0 <= iy < self.size) or not self.known[ix, iy]:
            return False, 0.0, 0.0
        return True, float(self.cost_mean[ix, iy]), float(self.cost_std[ix, iy])


def integrate_pointcloud(grid: ElevationGrid, cloud: PointCloud) -> ElevationGrid:
    """Fuse a point cloud into a copy of the grid (scalar Kalman per cell)."""
    out = grid.copy()
    pts = cloud.points
    if len(pts) == 0:
        return out
    if not np.isfinite(pts).all():
        raise ValueError("point cloud contains non-finite points")
    ox, oy = grid.origin
    ix = np.floor((pts[:, 0] - ox) / grid.resolution).astype(np.int64)
    iy = np.floor((pts[:, 1] - oy) / grid.resolution).astype(np.int64)
    inside = (ix >= 0) & (ix < grid.size) & (iy >= 0) & (iy < grid.size)
    _kernels.fuse_points(ix[inside], iy[inside],
                         np.ascontiguousarray(pts[inside, 2]),
                         out.height_mean, out.height_var, out.n_obs, grid.meas_var)
    return out


def recenter(grid: ElevationGrid, new_center) -> ElevationGrid:
    """Shift the grid by whole cells toward new_center.

    Surviving cells keep their state at offset positions; cells scrolled in
    are unknown. The realised centre is snapped to the cell lattice.
    """
    res = grid.resolution
    di = int(round((new_center[0] - grid.center[0]) / res))
    dj = int(round((new_center[1] - grid.center[1]) / res))
    out = ElevationGrid(
        center=(grid.center[0] + di * res, grid.center[1] + dj * res),
        resolution=res, size=grid.size, meas_var=grid.meas_var)
    s = grid.size
    src_x = slice(max(di, 0), min(s + di, s))
    dst_x = slice(max(-di, 0), min(s - di, s))
    src_y = slice(max(dj, 0), min(s + dj, s))
    dst_y = slice(max(-dj, 0), min(s - dj, s))
    if src_x.start < src_x.stop and src_y.start < src_y.stop:
        out.height_mean[dst_x, dst_y] = grid.height_mean[src_x, src_y]
        out.height_var[dst_x, dst_y] = grid.height_var[src_x, src_y]
        out.n_obs[dst_x, dst_y] = grid.n_obs[src_x, src_y]
    return out


_NEIGHBOUR_OFFSETS = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)
                      if (di, dj) != (0, 0)]


def _shifted(arr: np.ndarray, di: int, dj: int, fill=0.0) -> np.ndarray:
    """arr sampled at (i+di, j+dj) with out-of-range cells filled."""
    out = np.full_like(arr, fill)
    s = arr.shape[0]
    src_x = slice(max(di, 0), min(s + di, s))
    dst_x = slice(max(-di, 0), min(s - di, s))
    src_y = slice(max(dj, 0), min(s + dj, s))
    dst_y = slice(max(-dj, 0), min(s - dj, s))
    out[dst_x, dst_y] = arr[src_x, src_y]
    return out


def slope_cost_map(grid: ElevationGrid) -> CostMap:
    """Cost from the local plane slope angle in each 3x3 window.

    Known cells with at least 3 known 8-neighbours get
    cost = clamp(atan(|grad|) / SLOPE_MAX, 0, 1); others stay unknown.
    """
    res = grid.resolution
    h = grid.height_mean
    kn = grid.known.astype(np.float64)

    # masked least-squares plane fit z = a*dx + b*dy + c per 3x3 window
    sxx = np.zeros_like(h)
    syy = np.zeros_like(h)
    sxy = np.zeros_like(h)
    sx = np.zeros_like(h)
    sy = np.zeros_like(h)
    sn = kn.copy()
    sxz = np.zeros_like(h)
    syz = np.zeros_like(h)
    sz = kn * h
    n_nb = np.zeros_like(h)
    for di, dj in _NEIGHBOUR_OFFSETS:
        w = _shifted(kn, di, dj)
        hz = _shifted(kn * h, di, dj)
        dx, dy = di * res, dj * res
        n_nb += w
        sxx += w * dx * dx
        syy += w * dy * dy
        sxy += w * dx * dy
        sx += w * dx
        sy += w * dy
        sn += w
        sxz += hz * dx
        syz += hz * dy
        sz += hz

    eligible = (grid.n_obs > 0) & (n_nb >= 3)
    A = np.stack([
        np.stack([sxx, sxy, sx], axis=-1),
        np.stack([sxy, syy, sy], axis=-1),
        np.stack([sx, sy, sn], axis=-1),
    ], axis=-2)
    rhs = np.stack([sxz, syz, sz], axis=-1)
    A[~eligible] = np.eye(3)
    rhs[~eligible] = 0.0
    sol = np.linalg.solve(A, rhs[..., None])[..., 0]
    theta = np.arctan(np.hypot(sol[..., 0], sol[..., 1]))

    out = CostMap.unknown_like(grid)
    out.cost_mean = np.where(eligible, np.clip(theta / SLOPE_MAX, 0.0, 1.0), 0.0)
    out.known = eligible.astype(np.uint8)
    return out


def elevation_cost_map(grid: ElevationGrid) -> CostMap:
    """Cost from the largest height step to any known 8-neighbour."""
    h = grid.height_mean
    known = grid.n_obs > 0
    step = np.zeros_like(h)
    for di, dj in _NEIGHBOUR_OFFSETS:
        nb_known = _shifted(known.astype(np.float64), di, dj) > 0
        diff = np.abs(h - _shifted(h, di, dj))
        step = np.where(known & nb_known, np.maximum(step, diff), step)
    out = CostMap.unknown_like(grid)
    out.cost_mean = np.where(known, np.clip(step / STEP_MAX, 0.0, 1.0), 0.0)
    out.known = known.astype(np.uint8)
    return out


def extract_patch_batch(grid: ElevationGrid, xs, ys, heading: float):
    """Patch features at many centres; returns (feats (M, 26), valid (M,))."""
    ox, oy = grid.origin
    return _kernels.extract_patches(grid.height_mean, grid.known, xs, ys,
                                    heading, ox, oy, grid.resolution)


def extract_patch(grid: ElevationGrid, x: float, y: float, heading: float) -> np.ndarray:
    """Rotated, centre-relative 5x5 height patch plus unknown fraction.

    Raises PatchUnavailableError when the cell under (x, y) is unknown.
    """
    feats, valid = extract_patch_batch(grid, [x], [y], heading)
    if not valid[0]:
        raise PatchUnavailableError(f"no observations under patch centre ({x}, {y})")
    return feats[0]
