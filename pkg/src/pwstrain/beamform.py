"""Delay-and-sum beamforming on angled receive mediums and coherent compounding."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numba
import numpy as np
from scipy.signal import hilbert

from .probe import ANGLED_MEDIUM, PlaneWaveEvent, TransducerSpec, tx_time_offset

DEFAULT_FOV = math.radians(30.0)


@dataclass(frozen=True)
class BeamGrid:
    """Rectangular pixel lattice rotated by ``medium_angle``.

    Axial unit vector (sin a, cos a), lateral unit vector (cos a, -sin a).
    Pixel (i, j) sits at ``origin + (i - ca) * axial_step * u + (j - cl) *
    lateral_step * v`` with ``ca = (n_axial - 1) / 2``, so for odd sizes the
    origin is a pixel.
    """

    medium_angle: float
    origin: tuple[float, float]
    axial_step: float
    lateral_step: float
    n_axial: int
    n_lateral: int

    @property
    def shape(self):
        return (self.n_axial, self.n_lateral)

    @property
    def axial_unit(self):
        return np.array([math.sin(self.medium_angle), math.cos(self.medium_angle)])

    @property
    def lateral_unit(self):
        return np.array([math.cos(self.medium_angle), -math.sin(self.medium_angle)])

    @property
    def center_index(self):
        return ((self.n_axial - 1) / 2.0, (self.n_lateral - 1) / 2.0)

    def local_coordinates(self):
        """Axial and lateral offsets (m) from the origin of each row/column."""
        ca, cl = self.center_index
        return ((np.arange(self.n_axial) - ca) * self.axial_step,
                (np.arange(self.n_lateral) - cl) * self.lateral_step)

    def positions(self):
        """Probe coordinates ``(x, z)``, each of shape (n_axial, n_lateral)."""
        a, l = self.local_coordinates()
        u, v = self.axial_unit, self.lateral_unit
        x = self.origin[0] + a[:, None] * u[0] + l[None, :] * v[0]
        z = self.origin[1] + a[:, None] * u[1] + l[None, :] * v[1]
        return x, z

    def to_index(self, x, z):
        """Fractional (axial, lateral) pixel indices of probe points."""
        dx = np.asarray(x) - self.origin[0]
        dz = np.asarray(z) - self.origin[1]
        u, v = self.axial_unit, self.lateral_unit
        ca, cl = self.center_index
        return (dx * u[0] + dz * u[1]) / self.axial_step + ca, (dx * v[0] + dz * v[1]) / self.lateral_step + cl


@dataclass(frozen=True, eq=False)
class BeamformedFrame:
    rf: np.ndarray
    grid: BeamGrid
    compounded_events: int = 1

    def __post_init__(self):
        if self.rf.shape != self.grid.shape:
            raise ValueError(f"rf shape {self.rf.shape} does not match grid {self.grid.shape}")
        if self.compounded_events < 1:
            raise ValueError("compounded_events must be >= 1")


def _odd_count(extent: float, step: float) -> int:
    return 2 * int(round(extent / (2 * step))) + 1


def make_grid(medium_angle: float, origin=(0.0, 15e-3), extent=(13e-3, 13e-3),
              axial_step=18e-6, lateral_step=46e-6) -> BeamGrid:
    if axial_step <= 0 or lateral_step <= 0:
        raise ValueError("grid steps must be positive")
    return BeamGrid(float(medium_angle), (float(origin[0]), float(origin[1])), float(axial_step),
                    float(lateral_step), _odd_count(extent[0], axial_step), _odd_count(extent[1], lateral_step))


def make_mediums(origin=(0.0, 15e-3), extent=(13e-3, 13e-3), axial_step=18e-6, lateral_step=46e-6,
                 angle=ANGLED_MEDIUM) -> list[BeamGrid]:
    """The -angle, 0 and +angle mediums with a shared origin and identical sizes."""
    return [make_grid(a, origin, extent, axial_step, lateral_step) for a in (-angle, 0.0, angle)]


def directivity_weight(spec: TransducerSpec, element_x, pixel, medium_angle: float, fov: float = DEFAULT_FOV):
    """Receive weight of an element for a pixel on a medium rotated by ``medium_angle``.

    sinc(k L/2 sin t), with t the angle between the element-to-pixel direction
    and the element normal rotated by the medium angle; zero beyond ``fov``.
    """
    x, z = pixel
    dx = np.asarray(x) - np.asarray(element_x)
    dz = np.asarray(z)
    theta = np.arctan2(dx, dz) - medium_angle
    u = spec.wavenumber * spec.element_width / 2 * np.sin(theta)
    w = np.sinc(u / np.pi)
    return np.where(np.abs(theta) <= fov + 1e-12, w, 0.0)


@numba.njit(cache=True, parallel=True, nogil=True)
def _das_kernel(panels, angles, offsets, elem_x, px, pz, medium_angle, fs, t0, c, half_kl, cos_fov, tan_lo, tan_hi, out):
    """Per-event DAS sums, one pixel per iteration.

    ``out[k, p]`` receives the element-ordered sum for event k; the receive
    weight and path are shared by all events of a pixel.
    """
    n_ev, n_el, n_s = panels.shape
    sin_m = math.sin(medium_angle)
    cos_m = math.cos(medium_angle)
    pitch = elem_x[1] - elem_x[0]
    sin_a = np.sin(angles)
    cos_a = np.cos(angles)
    for p in numba.prange(px.shape[0]):
        x = px[p]
        z = pz[p]
        acc = np.zeros(n_ev)
        # element range inside the field-of-view cone, padded by one element
        lo = int(math.floor((x - z * tan_hi - elem_x[0]) / pitch)) - 1
        hi = int(math.ceil((x - z * tan_lo - elem_x[0]) / pitch)) + 1
        if lo < 0:
            lo = 0
        if hi > n_el - 1:
            hi = n_el - 1
        for e in range(lo, hi + 1):
            dx = x - elem_x[e]
            r = math.sqrt(dx * dx + z * z)
            cos_t = (dx * sin_m + z * cos_m) / r
            if cos_t < cos_fov:
                continue
            sin_t = (dx * cos_m - z * sin_m) / r
            u = half_kl * sin_t
            w = 1.0 if u == 0.0 else math.sin(u) / u
            t_rx = r / c
            for k in range(n_ev):
                t = (x * sin_a[k] + z * cos_a[k]) / c + offsets[k] + t_rx
                pos = (t - t0) * fs
                if pos < 0.0:
                    continue
                i0 = int(pos)
                if i0 + 1 >= n_s:
                    continue
                f = pos - i0
                acc[k] += w * ((1.0 - f) * panels[k, e, i0] + f * panels[k, e, i0 + 1])
        for k in range(n_ev):
            out[k, p] = acc[k]


def das_frames(panels, spec: TransducerSpec, events, grid: BeamGrid, t0: float = 0.0, fs: float | None = None,
               fov: float = DEFAULT_FOV) -> list[BeamformedFrame]:
    """Beamform several events onto one grid; one frame per event."""
    panels = np.ascontiguousarray(panels, dtype=float)
    if panels.ndim == 2:
        panels = panels[None]
    events = list(events)
    if len(events) != panels.shape[0]:
        raise ValueError("one panel per event required")
    for ev in events:
        if ev.medium_angle != grid.medium_angle:
            raise ValueError(f"event medium {ev.medium_angle} does not match grid medium {grid.medium_angle}")
    fs = spec.output_sampling_frequency if fs is None else fs
    angles = np.array([ev.steering_angle for ev in events], dtype=float)
    offsets = np.array([tx_time_offset(spec, a) for a in angles])
    x, z = grid.positions()
    if np.any(z <= 0):
        raise ValueError("grid extends above the array")
    out = np.empty((len(events), x.size))
    half_kl = spec.wavenumber * spec.element_width / 2
    _das_kernel(panels, angles, offsets, spec.element_positions(), x.ravel(), z.ravel(), grid.medium_angle,
                fs, t0, spec.sound_speed, half_kl, math.cos(fov) - 1e-12,
                math.tan(grid.medium_angle - fov), math.tan(grid.medium_angle + fov), out)
    return [BeamformedFrame(out[k].reshape(grid.shape), grid, 1) for k in range(len(events))]


def das_beamform(panel, spec: TransducerSpec, event: PlaneWaveEvent, grid: BeamGrid, t0: float = 0.0,
                 fs: float | None = None, fov: float = DEFAULT_FOV) -> BeamformedFrame:
    """Raw delay-and-sum of one transmit onto ``grid`` (no normalisation by the weights)."""
    return das_frames(np.asarray(panel)[None], spec, [event], grid, t0, fs, fov)[0]


def coherent_compound(frames) -> BeamformedFrame:
    """Pixelwise RF sum, accumulated in list order."""
    frames = list(frames)
    if not frames:
        raise ValueError("nothing to compound")
    grid = frames[0].grid
    rf = frames[0].rf.copy()
    for fr in frames[1:]:
        if fr.grid != grid:
            raise ValueError("frames live on different grids")
        rf += fr.rf
    return BeamformedFrame(rf, grid, sum(fr.compounded_events for fr in frames))


def beamform_medium(dataset, spec: TransducerSpec, grid: BeamGrid, fov: float = DEFAULT_FOV):
    """Compounded frame of every event that belongs to ``grid``'s medium.

    Returns ``(compounded, single)`` where ``single`` is the uncompounded frame
    of the event steered closest to the medium angle.
    """
    idx = [k for k, ev in enumerate(dataset.sequence.events) if ev.medium_angle == grid.medium_angle]
    if not idx:
        raise ValueError("no events for this medium")
    events = [dataset.sequence.events[k] for k in idx]
    frames = das_frames(dataset.samples[idx], spec, events, grid, dataset.t0, dataset.sampling_frequency, fov)
    centre = min(range(len(events)), key=lambda k: abs(events[k].steering_angle - grid.medium_angle))
    return coherent_compound(frames), frames[centre]


def envelope(frame) -> np.ndarray:
    """Analytic-signal magnitude along the axial dimension."""
    rf = frame.rf if isinstance(frame, BeamformedFrame) else np.asarray(frame)
    if rf.shape[0] < 8:
        raise ValueError("need at least 8 axial samples")
    return np.abs(hilbert(rf, axis=0))
