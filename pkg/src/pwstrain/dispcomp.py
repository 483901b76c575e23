"""Lateral displacement from the axial estimates of the two angled mediums."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .tracking import DisplacementField, TrackingGrid


@dataclass(frozen=True, eq=False)
class VectorDisplacementField:
    """Probe-frame displacement (x lateral, z axial) on the 0 deg tracking lattice."""

    u_x: np.ndarray
    u_z: np.ndarray
    valid: np.ndarray
    grid: TrackingGrid

    def __post_init__(self):
        if not (self.u_x.shape == self.u_z.shape == self.valid.shape == self.grid.shape):
            raise ValueError("field arrays must match the lattice shape")


def triangulate_lateral(a_plus, a_minus, theta_m: float):
    """u_x from the displacement projected on (+-sin t, cos t).

    With ``a_pm = +-u_x sin t + u_z cos t`` the lateral component is
    ``(a_plus - a_minus) / (2 sin t)``.
    """
    if not 0 < theta_m < math.pi / 2:
        raise ValueError("theta_m must lie in (0, pi/2)")
    return (np.asarray(a_plus) - np.asarray(a_minus)) / (2 * math.sin(theta_m))


def axial_from_angled(a_plus, a_minus, theta_m: float):
    """u_z implied by the two angled estimates; used as a consistency diagnostic."""
    return (np.asarray(a_plus) + np.asarray(a_minus)) / (2 * math.cos(theta_m))


def resample_to_reference(values, source: TrackingGrid, ref_grid: TrackingGrid, exact_only: bool = False):
    """Bilinear interpolation of a scalar lattice field at ``ref_grid``'s points.

    ``values`` is an array on ``source`` (or a DisplacementField, whose axial
    component is used). Returns ``(resampled, valid)``; reference points outside
    the source lattice are invalid. ``exact_only`` keeps only reference points
    that coincide with a source lattice point.
    """
    if isinstance(values, DisplacementField):
        values = values.u_axial
    values = np.asarray(values, dtype=float)
    x, z = ref_grid.positions()
    fa, fl = source.to_index(x, z)
    na, nl = source.shape
    tol = 1e-9
    inside = (fa >= -tol) & (fa <= na - 1 + tol) & (fl >= -tol) & (fl <= nl - 1 + tol)
    if not inside.any():
        raise ValueError("source and reference lattices do not overlap")
    fa = np.clip(fa, 0, na - 1)
    fl = np.clip(fl, 0, nl - 1)
    # snap numerically-integer coordinates so shared lattice points pass through exactly
    ra, rl = np.rint(fa), np.rint(fl)
    fa = np.where(np.abs(fa - ra) < tol, ra, fa)
    fl = np.where(np.abs(fl - rl) < tol, rl, fl)
    i0 = np.minimum(np.floor(fa).astype(int), na - 1)
    j0 = np.minimum(np.floor(fl).astype(int), nl - 1)
    i1 = np.minimum(i0 + 1, na - 1)
    j1 = np.minimum(j0 + 1, nl - 1)
    wa = fa - i0
    wl = fl - j0
    out = values[i0, j0].copy()
    # add neighbour terms only where their weight is non-zero
    m = wa > 0
    out[m] += wa[m] * (values[i1, j0][m] - values[i0, j0][m])
    m = wl > 0
    top = values[i0, j1] - values[i0, j0]
    bottom = values[i1, j1] - values[i1, j0]
    corr = np.where(wa > 0, (1 - wa) * top + wa * bottom, top)
    out[m] += wl[m] * corr[m]
    valid = inside & np.isfinite(out)
    if exact_only:
        valid &= (fa == np.floor(fa)) & (fl == np.floor(fl))
    out[~valid] = np.nan
    return out, valid


def assemble_vector_field(u_z, u_x, grid: TrackingGrid, valid_z=None, valid_x=None) -> VectorDisplacementField:
    u_z = np.asarray(u_z, dtype=float)
    u_x = np.asarray(u_x, dtype=float)
    if u_z.shape != u_x.shape or u_z.shape != grid.shape:
        raise ValueError(f"shape mismatch: u_z {u_z.shape}, u_x {u_x.shape}, grid {grid.shape}")
    valid = np.isfinite(u_z) & np.isfinite(u_x)
    if valid_z is not None:
        valid &= np.asarray(valid_z, bool)
    if valid_x is not None:
        valid &= np.asarray(valid_x, bool)
    return VectorDisplacementField(np.where(valid, u_x, np.nan), np.where(valid, u_z, np.nan), valid, grid)


def compound_displacement(minus: DisplacementField, zero: DisplacementField, plus: DisplacementField,
                          exact_only: bool = False):
    """Vector field on the 0 deg lattice from the three medium estimates.

    Returns the field and the RMS discrepancy (m) between the 0 deg axial
    estimate and the axial component implied by the angled mediums.
    """
    theta = plus.grid.medium_angle
    if not math.isclose(minus.grid.medium_angle, -theta) or zero.grid.medium_angle != 0:
        raise ValueError("expected mediums at -t, 0 and +t")
    a_plus, v_plus = resample_to_reference(plus, plus.grid, zero.grid, exact_only)
    a_minus, v_minus = resample_to_reference(minus, minus.grid, zero.grid, exact_only)
    both = v_plus & v_minus
    u_x = np.full(zero.grid.shape, np.nan)
    u_x[both] = triangulate_lateral(a_plus[both], a_minus[both], theta)
    field = assemble_vector_field(zero.u_axial, u_x, zero.grid, valid_x=both)
    check = axial_from_angled(a_plus, a_minus, theta) - zero.u_axial
    rms = float(np.sqrt(np.mean(check[field.valid] ** 2))) if field.valid.any() else float("nan")
    return field, rms
