"""Procedural ground-truth terrain: seeded value noise plus radial bumps.

Heights are a pure deterministic function of (spec, x, y), safe to evaluate
concurrently; the hot batch path lives in the kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

PROFILES = {
    "cosine": _kernels.PROFILE_COSINE,
    "trapezoid": _kernels.PROFILE_TRAPEZOID,
    "step": _kernels.PROFILE_STEP,
}
PROFILE_NAMES = {v: k for k, v in PROFILES.items()}
_NO_BUMPS = np.zeros((0, 5))


@dataclass(frozen=True)
class Bump:
    """Radial bump: centre (m), peak height (m), radius (m), profile name."""

    center: tuple
    height: float
    radius: float
    profile: str = "cosine"

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown bump profile {self.profile!r}")
        if self.height < 0.0:
            raise ValueError("bump height must be >= 0")
        if self.radius <= 0.0:
            raise ValueError("bump radius must be > 0")


@dataclass(frozen=True)
class TerrainSpec:
    """Parameters of one generated terrain.

    micro_amplitude adds a sub-cell texture layer (think soil or gravel
    character) that shakes the suspension but is too fine for the mapping
    resolution: wheel contacts feel it, lidar returns do not. It is the
    task-specific factor a vibration model cannot read off the map and
    must adapt to from interaction.
    """

    seed: int
    roughness_amplitude: float = 0.0
    roughness_wavelength: float = 1.0
    bumps: tuple = ()
    extent: float = 60.0  # square half-width, m
    micro_amplitude: float = 0.0
    micro_wavelength: float = 0.25

    def __post_init__(self):
        if self.roughness_amplitude < 0.0:
            raise ValueError("roughness amplitude must be >= 0")
        if self.roughness_wavelength <= 0.0:
            raise ValueError("roughness wavelength must be > 0")
        if self.micro_amplitude < 0.0:
            raise ValueError("micro amplitude must be >= 0")
        if self.micro_wavelength <= 0.0:
            raise ValueError("micro wavelength must be > 0")
        if self.extent <= 0.0:
            raise ValueError("extent must be > 0")
        object.__setattr__(self, "bumps", tuple(self.bumps))
        for b in self.bumps:
            if max(abs(b.center[0]), abs(b.center[1])) > self.extent:
                raise ValueError(f"bump at {b.center} outside extent {self.extent}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "roughness_amplitude": self.roughness_amplitude,
            "roughness_wavelength": self.roughness_wavelength,
            "extent": self.extent,
            "micro_amplitude": self.micro_amplitude,
            "micro_wavelength": self.micro_wavelength,
            "bumps": [
                {"center": list(b.center), "height": b.height,
                 "radius": b.radius, "profile": b.profile}
                for b in self.bumps
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TerrainSpec":
        return cls(
            seed=int(doc["seed"]),
            roughness_amplitude=float(doc.get("roughness_amplitude", 0.0)),
            roughness_wavelength=float(doc.get("roughness_wavelength", 1.0)),
            extent=float(doc.get("extent", 60.0)),
            micro_amplitude=float(doc.get("micro_amplitude", 0.0)),
            micro_wavelength=float(doc.get("micro_wavelength", 0.25)),
            bumps=tuple(
                Bump(tuple(b["center"]), float(b["height"]), float(b["radius"]),
                     b.get("profile", "cosine"))
                for b in doc.get("bumps", ())
            ),
        )


class HeightField:
    """Evaluates the terrain height function of a TerrainSpec."""

    def __init__(self, spec: TerrainSpec):
        self.spec = spec
        self._bump_arr = np.array(
            [[b.center[0], b.center[1], b.height, b.radius, PROFILES[b.profile]]
             for b in spec.bumps],
            dtype=np.float64,
        ).reshape(-1, 5)

    def height(self, x: float, y: float) -> float:
        return float(self.height_batch(np.float64(x), np.float64(y)))

    def height_batch(self, xs, ys) -> np.ndarray:
        """Surface height as a ranging sensor resolves it (no micro texture)."""
        s = self.spec
        return _kernels.terrain_heights(
            xs, ys, s.seed, s.roughness_amplitude, s.roughness_wavelength,
            self._bump_arr)

    def contact_height_batch(self, xs, ys) -> np.ndarray:
        """Height as a wheel contact patch feels it: surface plus texture."""
        z = self.height_batch(xs, ys)
        s = self.spec
        if s.micro_amplitude > 0.0:
            z = z + _kernels.terrain_heights(
                xs, ys, s.seed + 7919, s.micro_amplitude, s.micro_wavelength,
                _NO_BUMPS)
        return z

    @property
    def amplitude_bound(self) -> float:
        """Upper bound on |height|: noise octaves, texture, stacked bumps."""
        s = self.spec
        return (1.5 * (s.roughness_amplitude + s.micro_amplitude)
                + sum(b.height for b in s.bumps))


def generate_terrain(spec: TerrainSpec) -> HeightField:
    """Build the height function for a validated terrain spec."""
    return HeightField(spec)


def read_state_truth(field: HeightField, x: float, y: float, step: float = 0.05):
    """Ground-truth local height and central-difference gradient (test labels)."""
    h = field.height(x, y)
    gx = (field.height(x + step, y) - field.height(x - step, y)) / (2.0 * step)
    gy = (field.height(x, y + step) - field.height(x, y - step)) / (2.0 * step)
    return h, (gx, gy)
