"""PSF and displacement/strain error metrics, plus analytic ground truth."""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np

from .beamform import BeamGrid
from .dispcomp import VectorDisplacementField

log = logging.getLogger(__name__)

CR_FLOOR_DB = 120.0


@dataclass(frozen=True)
class PsfReport:
    cr_db: float
    fwhm_axial: float
    fwhm_lateral: float
    peak_position: tuple[float, float]


@dataclass(frozen=True)
class ErrorReport:
    rmse_u_axial: float
    rmse_u_lateral: float
    rmse_strain_axial: float
    rmse_strain_lateral: float
    snr_db: float
    mask_fraction: float


def _vertex(cm, c0, cp):
    d = cm - 2 * c0 + cp
    if d >= 0:
        return 0.0, c0
    off = 0.5 * (cm - cp) / d
    return off, c0 - (cp - cm) ** 2 / (8 * d)


def refined_peak(env: np.ndarray):
    """Integer argmax plus separable 3-point parabolic refinement.

    Returns ``((row, col), (frac_row, frac_col), peak_value)``.
    """
    env = np.asarray(env, dtype=float)
    i, j = np.unravel_index(int(np.argmax(env)), env.shape)
    fi, fj, value = float(i), float(j), float(env[i, j])
    if 0 < i < env.shape[0] - 1:
        off, v = _vertex(env[i - 1, j], env[i, j], env[i + 1, j])
        fi += off
        value += v - env[i, j]
    if 0 < j < env.shape[1] - 1:
        off, v = _vertex(env[i, j - 1], env[i, j], env[i, j + 1])
        fj += off
        value += v - env[i, j]
    return (int(i), int(j)), (fi, fj), value


def contrast_ratio(env, grid: BeamGrid, radius: float | None = None, wavelength: float = 1540.0 / 5.3e6,
                   signed: bool = False) -> float:
    """Energy outside ``radius`` of the PSF peak relative to the total, in dB.

    ``radius`` defaults to 2.5 wavelengths. The magnitude is returned unless
    ``signed``; no energy outside the radius gives the 120 dB floor.
    """
    env = np.asarray(env, dtype=float)
    energy = env ** 2
    total = float(np.sum(energy))
    if total == 0:
        raise ValueError("envelope is identically zero")
    radius = 2.5 * wavelength if radius is None else radius
    _, (fi, fj), _ = refined_peak(env)
    a = (np.arange(env.shape[0]) - fi) * grid.axial_step
    l = (np.arange(env.shape[1]) - fj) * grid.lateral_step
    outside = np.hypot(a[:, None], l[None, :]) > radius
    e_out = float(np.sum(energy[outside]))
    if e_out == 0:
        cr = -CR_FLOOR_DB
    else:
        cr = 20 * math.log10(math.sqrt(e_out / total))
    log.debug("signed CR %.4f dB", cr)
    return cr if signed else abs(cr)


def fwhm(env, grid: BeamGrid, direction: str) -> float:
    """Width (m) at half the peak amplitude along the line through the peak."""
    env = np.asarray(env, dtype=float)
    (i, j), _, peak = refined_peak(env)
    if direction == "axial":
        line, pos, step = env[:, j], i, grid.axial_step
    elif direction == "lateral":
        line, pos, step = env[i, :], j, grid.lateral_step
    else:
        raise ValueError(f"direction must be 'axial' or 'lateral', got {direction!r}")
    half = 0.5 * peak
    crossings = []
    for sign in (-1, 1):
        k = pos
        while 0 <= k + sign < len(line) and line[k + sign] >= half:
            k += sign
        if not 0 <= k + sign < len(line):
            raise ValueError("PSF main lobe is clipped by the grid")
        a, b = line[k], line[k + sign]
        crossings.append(k + sign * (a - half) / (a - b))
    return float(abs(crossings[1] - crossings[0]) * step)


def psf_report(env, grid: BeamGrid, wavelength: float = 1540.0 / 5.3e6, radius_wavelengths: float = 2.5) -> PsfReport:
    _, (fi, fj), _ = refined_peak(env)
    x, z = _position(grid, fi, fj)
    return PsfReport(contrast_ratio(env, grid, radius_wavelengths * wavelength),
                     fwhm(env, grid, "axial"), fwhm(env, grid, "lateral"), (x, z))


def _position(grid: BeamGrid, fi: float, fj: float):
    ca, cl = grid.center_index
    u, v = grid.axial_unit, grid.lateral_unit
    a = (fi - ca) * grid.axial_step
    l = (fj - cl) * grid.lateral_step
    return (float(grid.origin[0] + a * u[0] + l * v[0]), float(grid.origin[1] + a * u[1] + l * v[1]))


def rmse(estimate, truth, mask=None) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth differ in shape")
    mask = np.ones(estimate.shape, bool) if mask is None else np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("empty mask")
    d = estimate[mask] - truth[mask]
    return float(np.sqrt(np.mean(d * d)))


@dataclass(frozen=True)
class RigidMotion:
    shift: tuple[float, float]


@dataclass(frozen=True)
class VesselDeformation:
    """Inter-frame 1/R wall expansion: the lumen boundary moves ``inner_displacement``."""

    center: tuple[float, float]
    inner_radius: float
    outer_radius: float
    inner_displacement: float

    def region(self, x, z):
        """0 lumen, 1 wall, 2 background."""
        r = np.hypot(np.asarray(x) - self.center[0], np.asarray(z) - self.center[1])
        return np.where(r < self.inner_radius, 0, np.where(r <= self.outer_radius, 1, 2))


def ground_truth_displacement(model, grid) -> VectorDisplacementField:
    """Analytic displacement at every lattice point of ``grid``."""
    x, z = grid.positions()
    if isinstance(model, RigidMotion):
        return VectorDisplacementField(np.full(x.shape, float(model.shift[0])), np.full(x.shape, float(model.shift[1])),
                                       np.ones(x.shape, bool), grid)
    if isinstance(model, VesselDeformation):
        dx, dz = x - model.center[0], z - model.center[1]
        r2 = dx * dx + dz * dz
        region = model.region(x, z)
        k = np.where(region == 1, model.inner_displacement * model.inner_radius / np.where(r2 > 0, r2, 1.0), 0.0)
        valid = region != 0
        return VectorDisplacementField(np.where(valid, k * dx, np.nan), np.where(valid, k * dz, np.nan), valid, grid)
    raise TypeError(f"unsupported motion model {type(model).__name__}")


def ground_truth_strain(model, grid):
    """Analytic (e_xx, e_zz, e_xz, valid) of a motion model on ``grid``."""
    x, z = grid.positions()
    if isinstance(model, RigidMotion):
        zero = np.zeros(x.shape)
        return zero, zero.copy(), zero.copy(), np.ones(x.shape, bool)
    if isinstance(model, VesselDeformation):
        dx, dz = x - model.center[0], z - model.center[1]
        r2 = dx * dx + dz * dz
        region = model.region(x, z)
        k = np.where(region == 1, model.inner_displacement * model.inner_radius / np.where(r2 > 0, r2, 1.0) ** 2, 0.0)
        valid = region != 0
        nan = lambda a: np.where(valid, a, np.nan)
        return nan(k * (dz * dz - dx * dx)), nan(k * (dx * dx - dz * dz)), nan(-2 * k * dx * dz), valid
    raise TypeError(f"unsupported motion model {type(model).__name__}")


def error_report(field: VectorDisplacementField, strain, model, mask=None, snr_db: float = math.inf) -> ErrorReport:
    """RMSE of displacement and normal strains against the analytic model.

    ``mask`` further restricts the evaluation (e.g. to the vessel wall).
    """
    truth = ground_truth_displacement(model, field.grid)
    exx, ezz, _, tvalid = ground_truth_strain(model, field.grid)
    m = field.valid & truth.valid & tvalid & strain.valid
    if mask is not None:
        m &= np.asarray(mask, bool)
    return ErrorReport(
        rmse(field.u_z, truth.u_z, m),
        rmse(field.u_x, truth.u_x, m),
        rmse(strain.e_zz, ezz, m),
        rmse(strain.e_xx, exx, m),
        float(snr_db),
        float(m.mean()),
    )
