"""NumPy implementations of the hot kernels.

These are the fallback backend when the compiled extension is unavailable
(and the reference the extension is tested against). All functions operate
on plain float64/int64 arrays; semantics are documented here once and the
compiled backend mirrors them.

Grid convention shared by all kernels: a square grid of `size` cells per
side at `res` metres per cell, with `ox, oy` the world coordinates of the
lower-left corner of cell (0, 0). Arrays are indexed [ix, iy] with ix along
world x. A world point falls in cell ix = floor((x - ox) / res).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xC2B2AE3D27D4EB4F)
_M3 = np.uint64(0xD6E8FEB86659FD93)
_M4 = np.uint64(0xA0761D6478BD642F)
_F1 = np.uint64(0xFF51AFD7ED558CCD)
_F2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)
_INV53 = 1.0 / float(1 << 53)

PROFILE_COSINE = 0
PROFILE_TRAPEZOID = 1
PROFILE_STEP = 2


def _lattice01(ix, iy, seed: int, octave: int):
    """Deterministic uniform [0,1) value per lattice node (splitmix-style hash)."""
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        z = (
            ix.astype(np.uint64) * _M1
            ^ iy.astype(np.uint64) * _M2
            ^ np.uint64(np.int64(seed)) * _M3
            ^ np.uint64(octave) * _M4
        )
        z ^= z >> _S33
        z *= _F1
        z ^= z >> _S33
        z *= _F2
        z ^= z >> _S33
    return (z >> np.uint64(11)).astype(np.float64) * _INV53


def _value_noise(xs, ys, seed: int, amplitude: float, wavelength: float, octave: int):
    """Bilinear interpolation of a seeded lattice of uniform values in [-A, A]."""
    u = xs / wavelength
    v = ys / wavelength
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    fu = u - iu
    fv = v - iv
    v00 = _lattice01(iu, iv, seed, octave)
    v10 = _lattice01(iu + 1, iv, seed, octave)
    v01 = _lattice01(iu, iv + 1, seed, octave)
    v11 = _lattice01(iu + 1, iv + 1, seed, octave)
    top = v00 + (v10 - v00) * fu
    bot = v01 + (v11 - v01) * fu
    return amplitude * (2.0 * (top + (bot - top) * fv) - 1.0)


def bump_profile(d, height: float, radius: float, profile: int):
    """Radial bump height at distance d from the bump centre."""
    d = np.asarray(d, dtype=np.float64)
    if profile == PROFILE_COSINE:
        z = 0.5 * height * (1.0 + np.cos(np.pi * np.minimum(d / radius, 1.0)))
        return np.where(d < radius, z, 0.0)
    if profile == PROFILE_TRAPEZOID:
        z = np.clip(2.0 * (1.0 - d / radius), 0.0, 1.0) * height
        return np.where(d < radius, z, 0.0)
    if profile == PROFILE_STEP:
        return np.where(d <= radius, height, 0.0)
    raise ValueError(f"unknown bump profile id {profile}")


def terrain_heights(xs, ys, seed: int, amplitude: float, wavelength: float,
                    bumps: np.ndarray) -> np.ndarray:
    """Ground height at world points.

    Two octaves of value noise (base wavelength/amplitude plus one octave at
    half wavelength and half amplitude) plus the summed bump profiles.
    bumps is a (B, 5) float array of rows (cx, cy, height, radius, profile_id).
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    z = np.zeros(np.broadcast(xs, ys).shape)
    if amplitude > 0.0:
        z = z + _value_noise(xs, ys, seed, amplitude, wavelength, 0)
        z = z + _value_noise(xs, ys, seed, 0.5 * amplitude, 0.5 * wavelength, 1)
    for cx, cy, h, r, pid in np.atleast_2d(bumps) if len(bumps) else []:
        d = np.hypot(xs - cx, ys - cy)
        z = z + bump_profile(d, h, r, int(pid))
    return z


def fuse_points(ix, iy, z, mean, var, nobs, meas_var: float) -> None:
    """Fuse height measurements into grid cells by scalar Kalman updates.

    A fresh cell takes its first measurement as the prior; equal-variance
    Gaussian fusion is order-free, so the grouped precision-sum form below
    is algebraically identical to per-point sequential updates. Arrays are
    updated in place; indices must already be inside the grid.
    """
    if len(z) == 0:
        return
    size = mean.shape[0]
    flat = np.asarray(ix, dtype=np.int64) * size + np.asarray(iy, dtype=np.int64)
    counts = np.bincount(flat, minlength=size * size)
    sums = np.bincount(flat, weights=z, minlength=size * size)
    touched = np.nonzero(counts)[0]
    ti, tj = touched // size, touched % size
    n_new = counts[touched].astype(np.float64)
    prior_n = nobs[ti, tj]
    fresh = prior_n == 0
    prior_prec = np.where(fresh, 0.0, 1.0 / np.where(fresh, 1.0, var[ti, tj]))
    prec = prior_prec + n_new / meas_var
    mean[ti, tj] = (prior_prec * np.where(fresh, 0.0, mean[ti, tj])
                    + sums[touched] / meas_var) / prec
    var[ti, tj] = 1.0 / prec
    nobs[ti, tj] = prior_n + counts[touched]


def extract_patches(height, known, xs, ys, heading: float,
                    ox: float, oy: float, res: float):
    """Rotated 5x5 height patches (bilinear over known cells) at many centres.

    For each centre, samples a 5x5 lattice at `res` spacing in the heading
    frame (first index forward, second left), bilinearly interpolated over
    the four surrounding cell centres with unknown cells masked out of the
    weights. The centre sample height is subtracted from the known samples;
    unknown samples read 0. Feature 25 is the unknown-sample count / 25.

    Returns (feats (M, 26), valid (M,) uint8); valid is 0 where the cell
    containing the centre is unknown (features there are unspecified).
    """
    size = height.shape[0]
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(ys, dtype=np.float64))
    M = xs.shape[0]

    offs = np.arange(-2, 3) * res
    fwd, left = np.meshgrid(offs, offs, indexing="ij")
    c, s = np.cos(heading), np.sin(heading)
    dx = (c * fwd - s * left).ravel()
    dy = (s * fwd + c * left).ravel()

    px = xs[:, None] + dx[None, :]
    py = ys[:, None] + dy[None, :]

    u = (px - ox) / res - 0.5
    v = (py - oy) / res - 0.5
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    fu = u - iu
    fv = v - iv

    vals = np.zeros((M, 25))
    wsum = np.zeros((M, 25))
    for du, dv, w in (
        (0, 0, (1 - fu) * (1 - fv)),
        (1, 0, fu * (1 - fv)),
        (0, 1, (1 - fu) * fv),
        (1, 1, fu * fv),
    ):
        ci = iu + du
        cj = iv + dv
        inside = (ci >= 0) & (ci < size) & (cj >= 0) & (cj < size)
        cic = np.clip(ci, 0, size - 1)
        cjc = np.clip(cj, 0, size - 1)
        ok = inside & (known[cic, cjc] != 0)
        wk = np.where(ok, w, 0.0)
        vals += wk * np.where(ok, height[cic, cjc], 0.0)
        wsum += wk

    sample_known = wsum > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(sample_known, vals / np.where(sample_known, wsum, 1.0), 0.0)

    centre = vals[:, 12].copy()
    feats = np.zeros((M, 26))
    feats[:, :25] = np.where(sample_known, vals - centre[:, None], 0.0)
    feats[:, 25] = (25 - sample_known.sum(axis=1)) / 25.0

    cx = np.floor((xs - ox) / res).astype(np.int64)
    cy = np.floor((ys - oy) / res).astype(np.int64)
    inside = (cx >= 0) & (cx < size) & (cy >= 0) & (cy < size)
    valid = np.zeros(M, dtype=np.uint8)
    idx = np.nonzero(inside)[0]
    valid[idx] = (known[cx[idx], cy[idx]] != 0).astype(np.uint8)
    return feats, valid


def rollout_batch(x0: float, y0: float, heading0: float, speed0: float,
                  actions: np.ndarray,
                  cost_mean, cost_std, known,
                  ox: float, oy: float, res: float,
                  dt: float, wheelbase: float,
                  alpha_track: float, alpha_stable: float, alpha_speed: float,
                  beta: float, unknown_penalty: float, target_speed: float,
                  smoothness_weight: float):
    """Planar bicycle rollouts of N action sequences with terrain running cost.

    actions is (N, H, 2) of already-clamped (steering, accel). Per step the
    state advances speed -> heading -> position (each using the updated
    values), then the running cost is charged at the new position. Returns
    (costs (N,), speeds (N, H), x_final (N,), y_final (N,)) where
    speeds[:, t] is the speed *before* action t is applied (the state paired
    with that action). The ensemble uncertainty term and any terminal goal
    term are added by the caller.
    """
    actions = np.asarray(actions, dtype=np.float64)
    N, H, _ = actions.shape
    size = cost_mean.shape[0]
    x = np.full(N, x0)
    y = np.full(N, y0)
    psi = np.full(N, heading0)
    v = np.full(N, speed0)
    costs = np.zeros(N)
    speeds = np.zeros((N, H))
    for t in range(H):
        speeds[:, t] = v
        v = np.maximum(v + actions[:, t, 1] * dt, 0.0)
        psi = psi + v * np.tan(actions[:, t, 0]) / wheelbase * dt
        x = x + v * np.cos(psi) * dt
        y = y + v * np.sin(psi) * dt

        ix = np.floor((x - ox) / res).astype(np.int64)
        iy = np.floor((y - oy) / res).astype(np.int64)
        inside = (ix >= 0) & (ix < size) & (iy >= 0) & (iy < size)
        ixc = np.clip(ix, 0, size - 1)
        iyc = np.clip(iy, 0, size - 1)
        kn = inside & (known[ixc, iyc] != 0)
        track = np.where(kn, 0.0, unknown_penalty)
        stable = np.where(kn, cost_mean[ixc, iyc] + beta * cost_std[ixc, iyc], 0.0)
        dv = (v - target_speed) / target_speed
        costs += alpha_track * track + alpha_stable * stable + alpha_speed * dv * dv
    if H > 1 and smoothness_weight != 0.0:
        d = actions[:, 1:, :] - actions[:, :-1, :]
        costs += smoothness_weight * np.sum(d * d, axis=(1, 2))
    return costs, speeds, x, y
