"""Two-step speckle tracking: envelope NCC block matching, then RF subsample refinement."""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numba
import numpy as np

from .beamform import BeamformedFrame, BeamGrid, envelope


@dataclass(frozen=True)
class TrackingParams:
    """Block-matching parameters, all (axial, lateral) in metres.

    Search values are one-sided margins. ``roi`` limits the extent of the
    output lattice (``None``: as large as the frame allows). ``subsample``
    selects the RF peak fit, see :func:`ccf_fine_subsample`.
    """

    coarse_kernel: tuple[float, float] = (0.8e-3, 0.8e-3)
    coarse_search: tuple[float, float] = (0.2e-3, 0.2e-3)
    fine_kernel: tuple[float, float] = (0.2e-3, 0.2e-3)
    fine_search: tuple[float, float] = (0.06e-3, 0.1e-3)
    median_window: tuple[float, float] = (0.3e-3, 0.3e-3)
    output_grid_step: tuple[float, float] = (0.152e-3, 0.054e-3)
    roi: tuple[float, float] | None = None
    subsample: str = "coupled"

    def __post_init__(self):
        if self.subsample not in ("coupled", "separable"):
            raise ValueError("subsample must be 'coupled' or 'separable'")
        for name in ("coarse_kernel", "coarse_search", "fine_kernel", "fine_search", "median_window",
                     "output_grid_step"):
            if min(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")


def odd_count(length: float, step: float) -> int:
    """Number of samples covering ``length``, rounded to the nearest integer then up to odd."""
    n = max(1, int(round(length / step)))
    return n if n % 2 else n + 1


@dataclass(frozen=True)
class TrackingGrid:
    """Output lattice of a tracking run, tied to the beamforming grid it samples.

    Lattice point (i, j) sits at ``origin + (i - ca) * axial_step * u + (j - cl)
    * lateral_step * v`` in the medium's own basis; estimates use the nearest
    beamforming pixel as block centre.
    """

    beam_grid: BeamGrid
    axial_step: float
    lateral_step: float
    n_axial: int
    n_lateral: int

    @property
    def shape(self):
        return (self.n_axial, self.n_lateral)

    @property
    def medium_angle(self):
        return self.beam_grid.medium_angle

    @property
    def origin(self):
        return self.beam_grid.origin

    @property
    def center_index(self):
        return ((self.n_axial - 1) / 2.0, (self.n_lateral - 1) / 2.0)

    def local_coordinates(self):
        ca, cl = self.center_index
        return ((np.arange(self.n_axial) - ca) * self.axial_step,
                (np.arange(self.n_lateral) - cl) * self.lateral_step)

    def as_beam_grid(self) -> BeamGrid:
        """The lattice expressed as a (coarse) BeamGrid with the same geometry."""
        g = self.beam_grid
        return BeamGrid(g.medium_angle, g.origin, self.axial_step, self.lateral_step, self.n_axial, self.n_lateral)

    def positions(self):
        return self.as_beam_grid().positions()

    def to_index(self, x, z):
        return self.as_beam_grid().to_index(x, z)

    def pixel_centers(self):
        """Nearest beamforming pixel (row, column) of each lattice row/column."""
        a, l = self.local_coordinates()
        ca, cl = self.beam_grid.center_index
        rows = np.rint(ca + a / self.beam_grid.axial_step).astype(np.int64)
        cols = np.rint(cl + l / self.beam_grid.lateral_step).astype(np.int64)
        return rows, cols


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Displacement (m) along the grid's axial and lateral unit vectors."""

    u_axial: np.ndarray
    u_lateral: np.ndarray
    quality: np.ndarray
    grid: TrackingGrid

    def __post_init__(self):
        if not (self.u_axial.shape == self.u_lateral.shape == self.quality.shape == self.grid.shape):
            raise ValueError("field arrays must match the lattice shape")


def _margins(params: TrackingParams, beam: BeamGrid):
    steps = (beam.axial_step, beam.lateral_step)
    out = []
    for d in range(2):
        coarse = odd_count(params.coarse_kernel[d], steps[d]) // 2 + int(round(params.coarse_search[d] / steps[d]))
        fine = (odd_count(params.fine_kernel[d], steps[d]) // 2 + int(round(params.coarse_search[d] / steps[d]))
                + int(round(params.fine_search[d] / steps[d])) + 1)
        out.append(max(coarse, fine))
    return out


def make_tracking_grid(beam: BeamGrid, params: TrackingParams = TrackingParams()) -> TrackingGrid:
    """Largest symmetric output lattice whose blocks and searches stay inside ``beam``."""
    step_a, step_l = params.output_grid_step
    margin_a, margin_l = _margins(params, beam)
    ca, cl = beam.center_index
    room_a = (ca - margin_a) * beam.axial_step
    room_l = (cl - margin_l) * beam.lateral_step
    if params.roi is not None:
        room_a = min(room_a, params.roi[0] / 2)
        room_l = min(room_l, params.roi[1] / 2)
    # rounding to the nearest pixel can add half a pixel
    half_a = int(math.floor((room_a - 0.5 * beam.axial_step) / step_a + 1e-9))
    half_l = int(math.floor((room_l - 0.5 * beam.lateral_step) / step_l + 1e-9))
    if half_a < 0 or half_l < 0:
        raise ValueError("kernel plus search does not fit inside the frame")
    return TrackingGrid(beam, step_a, step_l, 2 * half_a + 1, 2 * half_l + 1)


def _lag_order(sa: int, sl: int):
    lags = [(a, l) for a in range(-sa, sa + 1) for l in range(-sl, sl + 1)]
    lags.sort(key=lambda t: (abs(t[0]), abs(t[1]), t[0], t[1]))
    return np.array([t[0] for t in lags], np.int64), np.array([t[1] for t in lags], np.int64)


@numba.njit(cache=True, parallel=True, nogil=True)
def _ncc_search(ref, mov, rows, cols, base_a, base_l, ka, kl, lag_a, lag_l):
    """Best integer lag per point by zero-normalised cross-correlation.

    Returns the winning lag (relative to ``base``) and the full table of NCC
    values, indexed like ``lag_a``/``lag_l``. Lags are visited in tie-break
    order and only a strictly larger value replaces the current best.
    """
    n_a = rows.shape[0]
    n_l = cols.shape[0]
    n_lag = lag_a.shape[0]
    H, W = ref.shape
    m = (2 * ka + 1) * (2 * kl + 1)
    best_a = np.zeros((n_a, n_l), np.int64)
    best_l = np.zeros((n_a, n_l), np.int64)
    best_q = np.zeros((n_a, n_l))
    table = np.full((n_a, n_l, n_lag), np.nan)
    for idx in numba.prange(n_a * n_l):
        i = idx // n_l
        j = idx % n_l
        r0 = rows[i]
        c0 = cols[j]
        patch = np.empty(m)
        s = 0.0
        t = 0
        for a in range(-ka, ka + 1):
            for b in range(-kl, kl + 1):
                v = ref[r0 + a, c0 + b]
                patch[t] = v
                s += v
                t += 1
        mean = s / m
        er = 0.0
        for t in range(m):
            patch[t] -= mean
            er += patch[t] * patch[t]
        if er == 0.0:
            continue
        best = -2.0
        for q in range(n_lag):
            ra = r0 + base_a[i, j] + lag_a[q]
            cb = c0 + base_l[i, j] + lag_l[q]
            if ra - ka < 0 or ra + ka >= H or cb - kl < 0 or cb + kl >= W:
                continue
            s1 = 0.0
            s2 = 0.0
            sp = 0.0
            t = 0
            for a in range(-ka, ka + 1):
                for b in range(-kl, kl + 1):
                    v = mov[ra + a, cb + b]
                    s1 += v
                    s2 += v * v
                    sp += patch[t] * v
                    t += 1
            em = s2 - s1 * s1 / m
            if em <= 0.0:
                val = 0.0
            else:
                val = sp / math.sqrt(er * em)
            table[i, j, q] = val
            if val > best:
                best = val
                best_a[i, j] = lag_a[q]
                best_l[i, j] = lag_l[q]
        best_q[i, j] = best if best > -2.0 else 0.0
    return best_a, best_l, best_q, table


def _pixel_params(params_kernel, params_search, beam: BeamGrid):
    ka = odd_count(params_kernel[0], beam.axial_step) // 2
    kl = odd_count(params_kernel[1], beam.lateral_step) // 2
    sa = int(round(params_search[0] / beam.axial_step))
    sl = int(round(params_search[1] / beam.lateral_step))
    return ka, kl, sa, sl


def ncc_coarse(ref_env, mov_env, params: TrackingParams, grid: TrackingGrid) -> DisplacementField:
    """Integer-pixel displacement by NCC block matching on envelope frames."""
    ref_env = np.ascontiguousarray(ref_env, dtype=float)
    mov_env = np.ascontiguousarray(mov_env, dtype=float)
    beam = grid.beam_grid
    if ref_env.shape != mov_env.shape or ref_env.shape != beam.shape:
        raise ValueError("frames must share the beamforming grid shape")
    ka, kl, sa, sl = _pixel_params(params.coarse_kernel, params.coarse_search, beam)
    if 2 * ka + 1 > beam.n_axial or 2 * kl + 1 > beam.n_lateral:
        raise ValueError("kernel larger than frame")
    rows, cols = grid.pixel_centers()
    lag_a, lag_l = _lag_order(sa, sl)
    zeros = np.zeros(grid.shape, np.int64)
    la, ll, q, _ = _ncc_search(ref_env, mov_env, rows, cols, zeros, zeros, ka, kl, lag_a, lag_l)
    return DisplacementField(la * beam.axial_step, ll * beam.lateral_step, q, grid)


def parabolic_offset(cm: float, c0: float, cp: float) -> float:
    """Vertex of the parabola through (-1, cm), (0, c0), (1, cp)."""
    denom = cm - 2 * c0 + cp
    if denom >= 0:
        return 0.0
    return 0.5 * (cm - cp) / denom


def ccf_fine_subsample(ref_rf, mov_rf, coarse: DisplacementField, params: TrackingParams,
                       grid: TrackingGrid) -> DisplacementField:
    """Refine a coarse field on RF frames by a quadratic fit around the integer NCC peak.

    ``params.subsample == "coupled"`` fits the full quadratic (including the
    axial-lateral cross term) through the 3x3 neighbourhood; a tilted
    correlation ridge then no longer drags the axial vertex when the integer
    lateral lag is off. ``"separable"`` fits two independent 1D parabolas.
    The coupled fit falls back to the separable one when the neighbourhood
    touches the search border or the quadratic has no maximum. Axes whose peak
    lies on the search border keep the integer lag.
    """
    ref_rf = np.ascontiguousarray(ref_rf, dtype=float)
    mov_rf = np.ascontiguousarray(mov_rf, dtype=float)
    beam = grid.beam_grid
    ka, kl, sa, sl = _pixel_params(params.fine_kernel, params.fine_search, beam)
    rows, cols = grid.pixel_centers()
    base_a = np.rint(coarse.u_axial / beam.axial_step).astype(np.int64)
    base_l = np.rint(coarse.u_lateral / beam.lateral_step).astype(np.int64)
    lag_a, lag_l = _lag_order(sa, sl)
    la, ll, q, table = _ncc_search(ref_rf, mov_rf, rows, cols, base_a, base_l, ka, kl, lag_a, lag_l)

    # table columns -> dense search window padded by one NaN lag on each side
    dense = np.full(grid.shape + (2 * sa + 3, 2 * sl + 3), np.nan)
    dense[:, :, lag_a + sa + 1, lag_l + sl + 1] = table
    I, J = np.indices(grid.shape)
    ia = la + sa + 1
    il = ll + sl + 1

    def c(da, dl):
        return dense[I, J, ia + da, il + dl]

    c0 = c(0, 0)
    # NCC cannot exceed 1, so a perfect integer match is already the peak
    free = np.isfinite(c0) & (c0 < 1.0 - 1e-12)
    inner_a = free & (la > -sa) & (la < sa)
    inner_l = free & (ll > -sl) & (ll < sl)
    ga = 0.5 * (c(1, 0) - c(-1, 0))
    gl = 0.5 * (c(0, 1) - c(0, -1))
    haa = c(1, 0) - 2 * c0 + c(-1, 0)
    hll = c(0, 1) - 2 * c0 + c(0, -1)

    ok_a = inner_a & np.isfinite(haa) & (haa < 0)
    ok_l = inner_l & np.isfinite(hll) & (hll < 0)
    sub_a = np.where(ok_a, -ga / np.where(ok_a, haa, -1.0), 0.0)
    sub_l = np.where(ok_l, -gl / np.where(ok_l, hll, -1.0), 0.0)
    if params.subsample == "coupled":
        hal = 0.25 * (c(1, 1) - c(1, -1) - c(-1, 1) + c(-1, -1))
        det = haa * hll - hal * hal
        ok = ok_a & ok_l & np.isfinite(det) & (det > 0)
        d = np.where(ok, det, 1.0)
        sub_a = np.where(ok, (-hll * ga + hal * gl) / d, sub_a)
        sub_l = np.where(ok, (hal * ga - haa * gl) / d, sub_l)
    sub_a = np.clip(sub_a, -1 + 1e-9, 1 - 1e-9)
    sub_l = np.clip(sub_l, -1 + 1e-9, 1 - 1e-9)
    # value of the fitted quadratic at its vertex: c0 + g.delta / 2
    rise = 0.5 * (np.where(ok_a, ga, 0.0) * sub_a + np.where(ok_l, gl, 0.0) * sub_l)
    peak = np.where(np.isfinite(c0), c0 + rise, q)

    u_a = (base_a + la + sub_a) * beam.axial_step
    u_l = (base_l + ll + sub_l) * beam.lateral_step
    return DisplacementField(u_a, u_l, np.clip(peak, -1.0, 1.0), grid)


def median_filter2d(field: DisplacementField, window) -> DisplacementField:
    """Componentwise median over ``window`` (m); edges use the part of the window inside."""
    grid = field.grid
    if window[0] < grid.axial_step * (1 - 1e-9) or window[1] < grid.lateral_step * (1 - 1e-9):
        raise ValueError("median window must cover at least one lattice step")
    na = odd_count(window[0], grid.axial_step)
    nl = odd_count(window[1], grid.lateral_step)
    return replace(field, u_axial=_median(field.u_axial, na, nl), u_lateral=_median(field.u_lateral, na, nl))


def _median(values: np.ndarray, na: int, nl: int) -> np.ndarray:
    ha, hl = na // 2, nl // 2
    padded = np.pad(values.astype(float), ((ha, ha), (hl, hl)), constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (na, nl))
    return np.nanmedian(windows.reshape(values.shape + (-1,)), axis=-1)


def two_step_track(ref_frame: BeamformedFrame, mov_frame: BeamformedFrame,
                   params: TrackingParams = TrackingParams(), grid: TrackingGrid | None = None) -> DisplacementField:
    """Envelope NCC -> median -> RF subsample refinement -> median."""
    if ref_frame.grid != mov_frame.grid:
        raise ValueError("frames must share a grid")
    if grid is None:
        grid = make_tracking_grid(ref_frame.grid, params)
    coarse = ncc_coarse(envelope(ref_frame), envelope(mov_frame), params, grid)
    coarse = median_filter2d(coarse, params.median_window)
    fine = ccf_fine_subsample(ref_frame.rf, mov_frame.rf, coarse, params, grid)
    return median_filter2d(fine, params.median_window)
