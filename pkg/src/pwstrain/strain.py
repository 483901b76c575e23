"""Least-squares strain estimation and principal strains."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .dispcomp import VectorDisplacementField
from .tracking import odd_count

AXIAL_WINDOW = (1.52e-3, 1.08e-3)
LATERAL_WINDOW = (0.76e-3, 1.62e-3)


@dataclass(frozen=True, eq=False)
class StrainField:
    e_xx: np.ndarray
    e_zz: np.ndarray
    e_xz: np.ndarray
    p_max: np.ndarray
    p_min: np.ndarray
    p_angle: np.ndarray
    valid: np.ndarray
    grid: object = None


@numba.njit(cache=True)
def _lsqse(values, valid, hd, ho):
    """Shared-slope regression along axis 0 with per-line intercepts along axis 1."""
    n0, n1 = values.shape
    out = np.full((n0, n1), np.nan)
    for i in range(n0):
        for j in range(n1):
            if not valid[i, j]:
                continue
            sxy = 0.0
            sxx = 0.0
            for jj in range(max(0, j - ho), min(n1, j + ho + 1)):
                n = 0
                ss = 0.0
                sv = 0.0
                for ii in range(max(0, i - hd), min(n0, i + hd + 1)):
                    if valid[ii, jj]:
                        n += 1
                        ss += ii - i
                        sv += values[ii, jj]
                if n < 2:
                    continue
                ms = ss / n
                mv = sv / n
                for ii in range(max(0, i - hd), min(n0, i + hd + 1)):
                    if valid[ii, jj]:
                        ds = (ii - i) - ms
                        sxy += ds * (values[ii, jj] - mv)
                        sxx += ds * ds
            if sxx > 0.0:
                out[i, j] = sxy / sxx
    return out


def lsqse_gradient(field, direction: str, window, steps, valid=None) -> np.ndarray:
    """Least-squares derivative of a lattice field.

    Parameters
    ----------
    field : (n_axial, n_lateral) array
    direction : {"axial", "lateral"}
        Differentiation direction (axis 0 or axis 1).
    window : (axial, lateral) window size in metres, rounded to odd sample counts.
    steps : (axial, lateral) lattice spacing in metres, or an object with
        ``axial_step``/``lateral_step``.
    valid : optional boolean mask; invalid samples are left out of every fit
        and produce NaN output.
    """
    if hasattr(steps, "axial_step"):
        steps = (steps.axial_step, steps.lateral_step)
    values = np.asarray(field, dtype=float)
    if valid is None:
        valid = np.isfinite(values)
    valid = np.asarray(valid, bool) & np.isfinite(values)
    if direction not in ("axial", "lateral"):
        raise ValueError(f"direction must be 'axial' or 'lateral', got {direction!r}")
    d = 0 if direction == "axial" else 1
    if round(window[d] / steps[d]) < 2:
        raise ValueError("window must span at least 2 samples along the differentiation direction")
    n_dir = odd_count(window[d], steps[d])
    n_orth = odd_count(window[1 - d], steps[1 - d])
    clean = np.where(valid, values, 0.0)
    if d == 0:
        return _lsqse(clean, valid, n_dir // 2, n_orth // 2) / steps[0]
    return _lsqse(clean.T.copy(), valid.T.copy(), n_dir // 2, n_orth // 2).T / steps[1]


def principal_strains(e_xx, e_zz, e_xz):
    """Eigenvalues (max, min) and orientation of the max of [[e_xx, e_xz], [e_xz, e_zz]]."""
    e_xx, e_zz, e_xz = (np.asarray(a, dtype=float) for a in (e_xx, e_zz, e_xz))
    mean = 0.5 * (e_xx + e_zz)
    radius = np.hypot(0.5 * (e_xx - e_zz), e_xz)
    angle = 0.5 * np.arctan2(2 * e_xz, e_xx - e_zz)
    return mean + radius, mean - radius, angle


def strain_tensor(disp: VectorDisplacementField, axial_window=AXIAL_WINDOW,
                  lateral_window=LATERAL_WINDOW) -> StrainField:
    """Small-strain tensor of a 0 deg-lattice displacement field.

    Derivatives along z use ``axial_window``, derivatives along x use
    ``lateral_window``; e_xz is the symmetric part of the two cross derivatives.
    """
    grid = disp.grid
    steps = (grid.axial_step, grid.lateral_step)
    valid = disp.valid
    e_zz = lsqse_gradient(disp.u_z, "axial", axial_window, steps, valid)
    e_xx = lsqse_gradient(disp.u_x, "lateral", lateral_window, steps, valid)
    dux_dz = lsqse_gradient(disp.u_x, "axial", axial_window, steps, valid)
    duz_dx = lsqse_gradient(disp.u_z, "lateral", lateral_window, steps, valid)
    e_xz = 0.5 * (dux_dz + duz_dx)
    ok = valid & np.isfinite(e_xx) & np.isfinite(e_zz) & np.isfinite(e_xz)
    p_max, p_min, ang = principal_strains(e_xx, e_zz, e_xz)
    nan = lambda a: np.where(ok, a, np.nan)
    return StrainField(nan(e_xx), nan(e_zz), nan(e_xz), nan(p_max), nan(p_min), nan(ang), ok, grid)
