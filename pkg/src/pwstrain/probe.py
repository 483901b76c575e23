"""Transducer geometry, plane-wave transmit events and imaging sequences."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

# Angled receive mediums sit at +/- asin(1/3) (~19.4712 deg) so their lattices
# intersect the 0 deg lattice; they are called "20 deg" elsewhere.
ANGLED_MEDIUM = math.asin(1.0 / 3.0)


@dataclass(frozen=True)
class TransducerSpec:
    """Linear array geometry and band parameters.

    Defaults describe a GE9LD-like probe. ``element_count`` and
    ``fractional_bandwidth`` are not given by the probe datasheet values we
    use and are configurable.
    """

    center_frequency: float = 5.3e6
    pitch: float = 230e-6
    element_width: float = 200e-6
    element_count: int = 191
    sound_speed: float = 1540.0
    sim_sampling_frequency: float = 148.4e6
    output_sampling_frequency: float = 21.2e6
    fractional_bandwidth: float = 0.6

    def __post_init__(self):
        if self.element_count < 2:
            raise ValueError("element_count must be >= 2")
        if not 0 < self.element_width <= self.pitch:
            raise ValueError("element_width must be in (0, pitch]")
        if min(self.center_frequency, self.sound_speed, self.fractional_bandwidth) <= 0:
            raise ValueError("center_frequency, sound_speed and bandwidth must be positive")
        f_max = self.center_frequency * (1 + self.fractional_bandwidth / 2)
        if self.output_sampling_frequency < 2 * f_max * (1 - 1e-12):
            raise ValueError(
                f"output_sampling_frequency {self.output_sampling_frequency:g} Hz aliases "
                f"a band reaching {f_max:g} Hz"
            )
        ratio = self.sim_sampling_frequency / self.output_sampling_frequency
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("sim_sampling_frequency must be an integer multiple of output_sampling_frequency")

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.center_frequency

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def decimation_factor(self) -> int:
        return int(round(self.sim_sampling_frequency / self.output_sampling_frequency))

    @property
    def aperture(self) -> float:
        return (self.element_count - 1) * self.pitch

    def element_positions(self) -> np.ndarray:
        """Lateral element centres, symmetric about x = 0."""
        n = self.element_count
        return (np.arange(n) - (n - 1) / 2.0) * self.pitch


@dataclass(frozen=True)
class PlaneWaveEvent:
    steering_angle: float
    medium_angle: float
    event_index: int


@dataclass(frozen=True)
class ImagingSequence:
    events: tuple[PlaneWaveEvent, ...]
    prf: float
    medium_angles: tuple[float, ...]
    nvs: int = 1
    theta_t: float = 0.0

    def __len__(self):
        return len(self.events)

    def event_time(self, index: int) -> float:
        return index / self.prf

    def events_for(self, medium_angle: float) -> list[PlaneWaveEvent]:
        return [ev for ev in self.events if ev.medium_angle == medium_angle]

    @property
    def steering_angles(self) -> np.ndarray:
        return np.array([ev.steering_angle for ev in self.events])


def build_sequence(medium_angles, nvs: int, theta_t: float, prf: float = 10e3) -> ImagingSequence:
    """Plane-wave imaging sequence with ``nvs`` transmits per receive medium.

    Steering angles for a medium are uniformly spaced on
    ``[medium - theta_t, medium + theta_t]`` with both endpoints included. A
    single transmit (``nvs == 1``) fires at the medium angle itself. Events are
    ordered medium-major, angle-ascending.
    """
    medium_angles = tuple(float(a) for a in medium_angles)
    if not medium_angles:
        raise ValueError("medium_angles must not be empty")
    if int(nvs) != nvs or nvs < 1:
        raise ValueError(f"nvs must be a positive integer, got {nvs}")
    if theta_t < 0:
        raise ValueError(f"theta_t must be non-negative, got {theta_t}")
    if prf <= 0:
        raise ValueError("prf must be positive")
    nvs = int(nvs)

    events = []
    for medium in medium_angles:
        if nvs == 1:
            angles = np.array([medium])
        else:
            angles = np.linspace(medium - theta_t, medium + theta_t, nvs)
        for angle in angles:
            events.append(PlaneWaveEvent(float(angle), medium, len(events)))
    return ImagingSequence(tuple(events), float(prf), medium_angles, nvs, float(theta_t))


def current_sequence(prf: float = 10e3, angle: float = ANGLED_MEDIUM) -> ImagingSequence:
    """One plane wave per medium at -angle, 0 and +angle."""
    return build_sequence((-angle, 0.0, angle), 1, 0.0, prf)


def proposed_sequence(prf: float = 10e3, nvs: int = 19, theta_t: float = math.radians(10),
                      angle: float = ANGLED_MEDIUM) -> ImagingSequence:
    """19 plane waves spanning +/-10 deg around each of the three mediums."""
    return build_sequence((-angle, 0.0, angle), nvs, theta_t, prf)


def tx_time_offset(spec: TransducerSpec, angle: float) -> float:
    """Constant that makes the earliest element fire at t = 0.

    A plane wave steered at ``angle`` reaches point (x, z) at
    ``(x sin a + z cos a) / c + tx_time_offset``. Simulator and beamformer
    must both use this.
    """
    x = spec.element_positions()
    return -float(np.min(x * math.sin(angle))) / spec.sound_speed


def plane_wave_arrival(x, z, spec: TransducerSpec, angle: float):
    """One-way transmit time of a steered plane wave to point(s) (x, z)."""
    return (np.asarray(x) * math.sin(angle) + np.asarray(z) * math.cos(angle)) / spec.sound_speed \
        + tx_time_offset(spec, angle)


def transmit_delays(spec: TransducerSpec, event: PlaneWaveEvent) -> np.ndarray:
    """Per-element firing delays (s) for a steered plane wave; minimum is exactly 0."""
    proj = spec.element_positions() * math.sin(event.steering_angle)
    return (proj - proj.min()) / spec.sound_speed


def tukey_profile(u, cosine_fraction: float):
    """Tukey taper evaluated at normalised aperture coordinate ``u`` in [0, 1].

    Points outside [0, 1] get weight 0.
    """
    u = np.asarray(u, dtype=float)
    a = float(cosine_fraction)
    w = np.ones_like(u)
    if a > 0:
        # distance to the nearer edge keeps the taper exactly symmetric
        v = np.minimum(u, 1 - u)
        edge = v < a / 2
        w[edge] = 0.5 * (1 + np.cos(np.pi * (2 * v[edge] / a - 1)))
    w[(u < 0) | (u > 1)] = 0.0
    return w


def tukey_apodization(element_count: int, cosine_fraction: float) -> np.ndarray:
    if not 0 <= cosine_fraction <= 1:
        raise ValueError(f"cosine_fraction must be in [0, 1], got {cosine_fraction}")
    if element_count == 1:
        return np.ones(1)
    w = tukey_profile(np.linspace(0.0, 1.0, element_count), cosine_fraction)
    half = element_count // 2
    w[element_count - half:] = w[:half][::-1]
    return w
