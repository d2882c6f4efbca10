# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot kernels.

Semantics are defined module-wide in pure.py; this file mirrors them with
tight C loops. The point-fusion kernel runs the literal per-point Kalman
recursion (the numpy backend uses the equivalent grouped form).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, fabs, floor, hypot, sin, sqrt, tan
from libc.math cimport cos as ccos
from libc.math cimport M_PI
from libc.stdint cimport int64_t, uint8_t, uint64_t

cnp.import_array()

BACKEND_NAME = "cython"

cdef double _INV53 = 1.0 / 9007199254740992.0

cdef inline double _lattice01(int64_t ix, int64_t iy, int64_t seed, uint64_t octave) nogil:
    cdef uint64_t z = (
        (<uint64_t>ix) * <uint64_t>0x9E3779B97F4A7C15UL
        ^ (<uint64_t>iy) * <uint64_t>0xC2B2AE3D27D4EB4FUL
        ^ (<uint64_t>seed) * <uint64_t>0xD6E8FEB86659FD93UL
        ^ octave * <uint64_t>0xA0761D6478BD642FUL
    )
    z ^= z >> 33
    z *= <uint64_t>0xFF51AFD7ED558CCDUL
    z ^= z >> 33
    z *= <uint64_t>0xC4CEB9FE1A85EC53UL
    z ^= z >> 33
    return <double>(z >> 11) * _INV53


cdef inline double _value_noise(double x, double y, int64_t seed, double amplitude,
                                double wavelength, uint64_t octave) nogil:
    cdef double u = x / wavelength
    cdef double v = y / wavelength
    cdef int64_t iu = <int64_t>floor(u)
    cdef int64_t iv = <int64_t>floor(v)
    cdef double fu = u - iu
    cdef double fv = v - iv
    cdef double v00 = _lattice01(iu, iv, seed, octave)
    cdef double v10 = _lattice01(iu + 1, iv, seed, octave)
    cdef double v01 = _lattice01(iu, iv + 1, seed, octave)
    cdef double v11 = _lattice01(iu + 1, iv + 1, seed, octave)
    cdef double top = v00 + (v10 - v00) * fu
    cdef double bot = v01 + (v11 - v01) * fu
    return amplitude * (2.0 * (top + (bot - top) * fv) - 1.0)


cdef inline double _bump(double d, double h, double r, int profile) nogil:
    cdef double t
    if profile == 0:  # cosine
        if d < r:
            t = d / r
            return 0.5 * h * (1.0 + ccos(M_PI * t))
        return 0.0
    elif profile == 1:  # trapezoid
        if d < r:
            t = 2.0 * (1.0 - d / r)
            if t > 1.0:
                t = 1.0
            return h * t
        return 0.0
    else:  # step
        if d <= r:
            return h
        return 0.0


def terrain_heights(xs, ys, seed, amplitude, wavelength, bumps):
    cdef cnp.ndarray[double, ndim=1] bx = np.ascontiguousarray(
        np.broadcast_to(np.asarray(xs, dtype=np.float64),
                        np.broadcast(np.asarray(xs), np.asarray(ys)).shape).ravel())
    cdef cnp.ndarray[double, ndim=1] by = np.ascontiguousarray(
        np.broadcast_to(np.asarray(ys, dtype=np.float64),
                        np.broadcast(np.asarray(xs), np.asarray(ys)).shape).ravel())
    shape = np.broadcast(np.asarray(xs), np.asarray(ys)).shape
    cdef cnp.ndarray[double, ndim=2] bmp = np.ascontiguousarray(
        np.atleast_2d(np.asarray(bumps, dtype=np.float64)).reshape(-1, 5)
        if len(bumps) else np.zeros((0, 5)))
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(bx.shape[0])
    cdef int64_t n = bx.shape[0]
    cdef int64_t nb = bmp.shape[0]
    cdef int64_t sd = <int64_t>seed
    cdef double amp = amplitude
    cdef double wav = wavelength
    cdef int64_t i, k
    cdef double z, d
    with nogil:
        for i in range(n):
            z = 0.0
            if amp > 0.0:
                z += _value_noise(bx[i], by[i], sd, amp, wav, 0)
                z += _value_noise(bx[i], by[i], sd, 0.5 * amp, 0.5 * wav, 1)
            for k in range(nb):
                d = hypot(bx[i] - bmp[k, 0], by[i] - bmp[k, 1])
                z += _bump(d, bmp[k, 2], bmp[k, 3], <int>bmp[k, 4])
            out[i] = z
    return out.reshape(shape)


def fuse_points(ix, iy, z, mean, var, nobs, meas_var):
    cdef cnp.ndarray[int64_t, ndim=1] cix = np.ascontiguousarray(ix, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] ciy = np.ascontiguousarray(iy, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] cz = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] m = mean
    cdef double[:, ::1] s2 = var
    cdef int64_t[:, ::1] n = nobs
    cdef double mv = meas_var
    cdef int64_t k, a, b
    cdef double gain
    with nogil:
        for k in range(cz.shape[0]):
            a = cix[k]
            b = ciy[k]
            if n[a, b] == 0:
                m[a, b] = cz[k]
                s2[a, b] = mv
            else:
                gain = s2[a, b] / (s2[a, b] + mv)
                m[a, b] = m[a, b] + gain * (cz[k] - m[a, b])
                s2[a, b] = (1.0 - gain) * s2[a, b]
            n[a, b] = n[a, b] + 1


def extract_patches(height, known, xs, ys, heading, ox, oy, res):
    cdef double[:, ::1] h = np.ascontiguousarray(height, dtype=np.float64)
    cdef uint8_t[:, ::1] kn = np.ascontiguousarray(known, dtype=np.uint8)
    cdef cnp.ndarray[double, ndim=1] cxs = np.atleast_1d(
        np.ascontiguousarray(xs, dtype=np.float64))
    cdef cnp.ndarray[double, ndim=1] cys = np.atleast_1d(
        np.ascontiguousarray(ys, dtype=np.float64))
    cdef int64_t M = cxs.shape[0]
    cdef int64_t size = h.shape[0]
    cdef cnp.ndarray[double, ndim=2] feats = np.zeros((M, 26))
    cdef cnp.ndarray[uint8_t, ndim=1] valid = np.zeros(M, dtype=np.uint8)
    cdef double ch = cos(heading)
    cdef double sh = sin(heading)
    cdef double rres = res
    cdef double oxx = ox
    cdef double oyy = oy
    cdef int64_t mi, fi, lj, k, iu, iv, du, dv, ci, cj, cxi, cyi
    cdef double px, py, u, v, fu, fv, w, wsum, val, centre
    cdef double vals[25]
    cdef uint8_t skn[25]
    cdef int n_unknown
    with nogil:
        for mi in range(M):
            cxi = <int64_t>floor((cxs[mi] - oxx) / rres)
            cyi = <int64_t>floor((cys[mi] - oyy) / rres)
            if cxi >= 0 and cxi < size and cyi >= 0 and cyi < size and kn[cxi, cyi] != 0:
                valid[mi] = 1
            k = 0
            for fi in range(-2, 3):
                for lj in range(-2, 3):
                    px = cxs[mi] + ch * fi * rres - sh * lj * rres
                    py = cys[mi] + sh * fi * rres + ch * lj * rres
                    u = (px - oxx) / rres - 0.5
                    v = (py - oyy) / rres - 0.5
                    iu = <int64_t>floor(u)
                    iv = <int64_t>floor(v)
                    fu = u - iu
                    fv = v - iv
                    wsum = 0.0
                    val = 0.0
                    for du in range(2):
                        for dv in range(2):
                            ci = iu + du
                            cj = iv + dv
                            if ci >= 0 and ci < size and cj >= 0 and cj < size \
                                    and kn[ci, cj] != 0:
                                w = (fu if du == 1 else 1.0 - fu) * \
                                    (fv if dv == 1 else 1.0 - fv)
                                wsum += w
                                val += w * h[ci, cj]
                    if wsum > 1e-12:
                        vals[k] = val / wsum
                        skn[k] = 1
                    else:
                        vals[k] = 0.0
                        skn[k] = 0
                    k += 1
            centre = vals[12]
            n_unknown = 0
            for k in range(25):
                if skn[k] != 0:
                    feats[mi, k] = vals[k] - centre
                else:
                    feats[mi, k] = 0.0
                    n_unknown += 1
            feats[mi, 25] = n_unknown / 25.0
    return feats, valid


def rollout_batch(x0, y0, heading0, speed0, actions, cost_mean, cost_std, known,
                  ox, oy, res, dt, wheelbase, alpha_track, alpha_stable, alpha_speed,
                  beta, unknown_penalty, target_speed, smoothness_weight):
    cdef double[:, :, ::1] acts = np.ascontiguousarray(actions, dtype=np.float64)
    cdef double[:, ::1] cm = np.ascontiguousarray(cost_mean, dtype=np.float64)
    cdef double[:, ::1] cs = np.ascontiguousarray(cost_std, dtype=np.float64)
    cdef uint8_t[:, ::1] kn = np.ascontiguousarray(known, dtype=np.uint8)
    cdef int64_t N = acts.shape[0]
    cdef int64_t H = acts.shape[1]
    cdef int64_t size = cm.shape[0]
    cdef cnp.ndarray[double, ndim=1] costs = np.zeros(N)
    cdef cnp.ndarray[double, ndim=2] speeds = np.zeros((N, H))
    cdef cnp.ndarray[double, ndim=1] fx = np.zeros(N)
    cdef cnp.ndarray[double, ndim=1] fy = np.zeros(N)
    cdef double oxx = ox, oyy = oy, rres = res, step = dt, wb = wheelbase
    cdef double a1 = alpha_track, a2 = alpha_stable, a3 = alpha_speed
    cdef double bet = beta, unk = unknown_penalty, tgt = target_speed
    cdef double sw = smoothness_weight
    cdef double xx0 = x0, yy0 = y0, hh0 = heading0, vv0 = speed0
    cdef int64_t i, t, ix, iy
    cdef double x, y, psi, v, c, dv, d0, d1
    with nogil:
        for i in range(N):
            x = xx0
            y = yy0
            psi = hh0
            v = vv0
            c = 0.0
            for t in range(H):
                speeds[i, t] = v
                v = v + acts[i, t, 1] * step
                if v < 0.0:
                    v = 0.0
                psi = psi + v * tan(acts[i, t, 0]) / wb * step
                x = x + v * cos(psi) * step
                y = y + v * sin(psi) * step
                ix = <int64_t>floor((x - oxx) / rres)
                iy = <int64_t>floor((y - oyy) / rres)
                if ix >= 0 and ix < size and iy >= 0 and iy < size and kn[ix, iy] != 0:
                    c += a2 * (cm[ix, iy] + bet * cs[ix, iy])
                else:
                    c += a1 * unk
                dv = (v - tgt) / tgt
                c += a3 * dv * dv
            if sw != 0.0:
                for t in range(1, H):
                    d0 = acts[i, t, 0] - acts[i, t - 1, 0]
                    d1 = acts[i, t, 1] - acts[i, t - 1, 1]
                    c += sw * (d0 * d0 + d1 * d1)
            costs[i] = c
            fx[i] = x
            fy[i] = y
    return costs, speeds, fx, fy
