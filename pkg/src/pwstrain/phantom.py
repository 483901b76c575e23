"""Scatterer fields and the motion models applied between transmits and frames."""

from __future__ import annotations

from dataclasses import dataclass, replace
import enum
import math

import numpy as np


class Label(enum.IntEnum):
    WALL = 0
    BACKGROUND = 1
    POINT = 2


@dataclass(frozen=True, eq=False)
class ScattererField:
    """Point scatterers in the imaging plane (x lateral, z depth, metres)."""

    positions: np.ndarray  # (n, 2)
    amplitudes: np.ndarray  # (n,)
    labels: np.ndarray  # (n,) uint8, values of Label
    rng_seed: int | None = None

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float).reshape(-1, 2)
        amp = np.ascontiguousarray(self.amplitudes, dtype=float).reshape(-1)
        lab = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(-1)
        if not (len(pos) == len(amp) == len(lab)):
            raise ValueError("positions, amplitudes and labels must have equal length")
        if not np.all(np.isfinite(amp)) or not np.all(np.isfinite(pos)):
            raise ValueError("non-finite scatterer data")
        if np.any(pos[:, 1] <= 0):
            raise ValueError("all scatterers must lie below the array (z > 0)")
        for arr in (pos, amp, lab):
            arr.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.amplitudes)

    @property
    def x(self):
        return self.positions[:, 0]

    @property
    def z(self):
        return self.positions[:, 1]

    def select(self, mask) -> "ScattererField":
        return ScattererField(self.positions[mask], self.amplitudes[mask], self.labels[mask], self.rng_seed)

    def __or__(self, other: "ScattererField") -> "ScattererField":
        return ScattererField(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.amplitudes, other.amplitudes]),
            np.concatenate([self.labels, other.labels]),
            self.rng_seed,
        )

    @classmethod
    def empty(cls) -> "ScattererField":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0, np.uint8))


@dataclass(frozen=True)
class RadialMotionModel:
    """Radial wall motion following u(R) = u0 * R0 / R.

    ``bin_width`` sections the wall into rings; every scatterer in a ring moves
    by the displacement evaluated at the ring's centre radius. ``None`` uses
    the exact radius of each scatterer.
    """

    center: tuple[float, float]
    reference_radius: float
    reference_displacement: float
    bin_width: float | None = 10e-6

    def __post_init__(self):
        if self.reference_radius <= 0:
            raise ValueError("reference_radius must be positive")
        if self.bin_width is not None and self.bin_width <= 0:
            raise ValueError("bin_width must be positive or None")

    def displacement_at(self, radius):
        radius = np.asarray(radius, dtype=float)
        return self.reference_displacement * self.reference_radius / radius


def single_scatterer(depth: float, lateral: float = 0.0) -> ScattererField:
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    return ScattererField(np.array([[lateral, depth]]), np.ones(1), np.array([Label.POINT], np.uint8))


def vessel_phantom(center=(0.0, 15e-3), inner_diameter=6e-3, outer_diameter=12e-3,
                   wall_density=12.0, bg_extent=(16e-3, 16e-3), bg_density=12.0,
                   bg_level_db=-20.0, seed=0, wavelength=1540.0 / 5.3e6) -> ScattererField:
    """Annular vessel wall embedded in weaker background speckle.

    Densities are scatterers per wavelength squared. Counts are Poisson, so
    the expected count is ``density * area / wavelength**2``. Wall amplitudes
    are zero-mean Gaussian with unit RMS; background amplitudes have RMS
    ``10**(bg_level_db / 20)``. The lumen and the wall disc are excluded from
    the background rectangle, which is centred on the vessel.
    """
    if not 0 < inner_diameter < outer_diameter:
        raise ValueError("need 0 < inner_diameter < outer_diameter")
    if wall_density <= 0 or bg_density < 0:
        raise ValueError("wall_density must be positive and bg_density non-negative")
    cx, cz = center
    ri, ro = inner_diameter / 2, outer_diameter / 2
    rng = np.random.default_rng(seed)
    lam2 = wavelength ** 2

    n_wall = rng.poisson(wall_density * math.pi * (ro ** 2 - ri ** 2) / lam2)
    r = np.sqrt(rng.uniform(ri ** 2, ro ** 2, n_wall))
    phi = rng.uniform(0, 2 * math.pi, n_wall)
    wall_pos = np.column_stack([cx + r * np.cos(phi), cz + r * np.sin(phi)])
    wall_amp = rng.standard_normal(n_wall)

    w, h = bg_extent
    if bg_density > 0 and w > 0 and h > 0:
        if cz - h / 2 <= 0:
            raise ValueError("background rectangle reaches the array surface")
        n_bg = rng.poisson(bg_density * w * h / lam2)
        bx = rng.uniform(cx - w / 2, cx + w / 2, n_bg)
        bz = rng.uniform(cz - h / 2, cz + h / 2, n_bg)
        bg_amp = rng.standard_normal(n_bg) * 10 ** (bg_level_db / 20)
        keep = np.hypot(bx - cx, bz - cz) > ro
        bg_pos = np.column_stack([bx[keep], bz[keep]])
        bg_amp = bg_amp[keep]
    else:
        bg_pos, bg_amp = np.zeros((0, 2)), np.zeros(0)

    labels = np.concatenate([np.full(len(wall_amp), Label.WALL, np.uint8),
                             np.full(len(bg_amp), Label.BACKGROUND, np.uint8)])
    return ScattererField(np.concatenate([wall_pos, bg_pos]), np.concatenate([wall_amp, bg_amp]),
                          labels, seed)


def apply_radial_motion(field: ScattererField, model: RadialMotionModel, step_scale: float = 1.0) -> ScattererField:
    """Move non-background scatterers radially outward by one motion step."""
    if step_scale == 0 or len(field) == 0:
        return field
    moving = field.labels != Label.BACKGROUND
    dx = field.x - model.center[0]
    dz = field.z - model.center[1]
    radius = np.hypot(dx, dz)
    if np.any(radius[moving] == 0):
        raise ValueError("scatterer at the motion centre has no radial direction")
    rs = radius[moving]
    if model.bin_width is not None:
        rs = (np.floor(rs / model.bin_width) + 0.5) * model.bin_width
    step = np.zeros(len(field))
    step[moving] = step_scale * model.displacement_at(rs)
    scale = np.ones(len(field))
    scale[moving] = 1 + step[moving] / radius[moving]
    pos = np.column_stack([model.center[0] + dx * scale, model.center[1] + dz * scale])
    return replace(field, positions=pos)


def apply_rigid_shift(field: ScattererField, shift) -> ScattererField:
    return replace(field, positions=field.positions + np.asarray(shift, dtype=float))


def inter_transmit_step(inner_diameter: float, systole_fraction: float = 0.10,
                        systole_duration: float = 0.25, prf: float = 10e3) -> float:
    """Per-transmit radial displacement (m) at the lumen boundary.

    The lumen radius grows by ``systole_fraction`` of the diameter's half over
    ``systole_duration``, spread evenly over the transmits fired at ``prf``.
    """
    if min(inner_diameter, systole_fraction, systole_duration, prf) <= 0:
        raise ValueError("all inputs must be positive")
    return (systole_fraction * inner_diameter / 2) / (systole_duration * prf)
