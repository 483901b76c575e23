"""Point-scatterer pulse-echo simulator for steered plane waves.

A desk-scale stand-in for a full field simulator: single scattering, far-field
element directivity on receive, 1/r spreading applied once on receive, and a
first-order apodised transmit footprint.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
import math

import numba
import numpy as np
from scipy import signal

from .phantom import ScattererField
from .probe import ImagingSequence, PlaneWaveEvent, TransducerSpec, tx_time_offset


@dataclass(frozen=True)
class PulseModel:
    center_frequency: float
    fractional_bandwidth: float

    @property
    def sigma(self) -> float:
        """Std (s) of the two-way Gaussian envelope exp(-t^2 / 2 sigma^2)."""
        return math.sqrt(2 * math.log(2)) / (math.pi * self.fractional_bandwidth * self.center_frequency)

    @property
    def cycles(self) -> float:
        """Carrier cycles inside the -6 dB envelope width."""
        fwhm = 2 * self.sigma * math.sqrt(2 * math.log(2))
        return fwhm * self.center_frequency

    @classmethod
    def from_spec(cls, spec: TransducerSpec) -> "PulseModel":
        return cls(spec.center_frequency, spec.fractional_bandwidth)


@dataclass(frozen=True, eq=False)
class ChannelDataset:
    """RF channel data, shape (events, elements, samples)."""

    samples: np.ndarray
    sampling_frequency: float
    t0: float = 0.0
    sequence: ImagingSequence | None = None

    def __post_init__(self):
        if self.samples.ndim != 3:
            raise ValueError("samples must be 3D (event, element, time)")
        if self.t0 < 0:
            raise ValueError("t0 must be non-negative")
        if self.sequence is not None and len(self.sequence) != self.samples.shape[0]:
            raise ValueError("event count does not match the sequence")

    @property
    def n_events(self) -> int:
        return self.samples.shape[0]


def pulse_waveform(model: PulseModel, fs: float) -> np.ndarray:
    """Two-way pulse sampled at ``fs``; odd length with the peak at the centre.

    Gaussian-enveloped cosine (zero phase at the envelope peak) truncated where
    the envelope drops below -60 dB.
    """
    f0 = model.center_frequency
    if fs < 8 * f0:
        raise ValueError(f"fs={fs:g} Hz is below 8 x f0 ({8 * f0:g} Hz)")
    one_way = model.sigma * math.sqrt(2)
    t_max = model.sigma * math.sqrt(2 * math.log(1e3))
    n_half = int(math.floor(t_max * fs))
    t = np.arange(-n_half, n_half + 1) / fs
    envelope = np.exp(-t ** 2 / (2 * one_way ** 2)) ** 2
    return envelope * np.cos(2 * math.pi * f0 * t)


@numba.njit(cache=True, parallel=True)
def _deposit(px, pz, amp, tx_time, tx_weight, elem_x, c, fs, half_kl, n_samples):
    """Two-tap (linear interpolation) impulses per element; one thread per element."""
    n_el = elem_x.shape[0]
    out = np.zeros((n_el, n_samples))
    for e in numba.prange(n_el):
        xe = elem_x[e]
        for i in range(px.shape[0]):
            w = amp[i] * tx_weight[i]
            if w == 0.0:
                continue
            dx = px[i] - xe
            r = math.sqrt(dx * dx + pz[i] * pz[i])
            u = half_kl * dx / r
            d = 1.0 if u == 0.0 else math.sin(u) / u
            pos = (tx_time[i] + r / c) * fs
            k0 = int(math.floor(pos))
            frac = pos - k0
            if k0 < 0 or k0 + 1 >= n_samples:
                continue
            a = w * d / r
            out[e, k0] += a * (1.0 - frac)
            out[e, k0 + 1] += a * frac
    return out


def transmit_weight(field: ScattererField, spec: TransducerSpec, angle: float, tx_apod) -> np.ndarray:
    """Apodisation of the steered plane wave at each scatterer.

    The element weights are interpolated at the scatterer's projection along
    the steering direction onto the array; zero outside the aperture.
    """
    xe = spec.element_positions()
    proj = field.x - field.z * math.tan(angle)
    return np.interp(proj, xe, np.asarray(tx_apod, dtype=float), left=0.0, right=0.0)


def simulate_event(field: ScattererField, spec: TransducerSpec, event: PlaneWaveEvent,
                   tx_apod, record_depth: float, pulse: np.ndarray | None = None) -> np.ndarray:
    """RF panel (element, sample) at ``spec.sim_sampling_frequency``, t = 0 at first firing."""
    if len(field) and np.any(field.z <= 0):
        raise ValueError("scatterer behind the array")
    fs = spec.sim_sampling_frequency
    c = spec.sound_speed
    n_samples = int(math.ceil(2 * record_depth / c * fs))
    if pulse is None:
        pulse = pulse_waveform(PulseModel.from_spec(spec), fs)
    if len(field) == 0:
        return np.zeros((spec.element_count, n_samples))
    angle = event.steering_angle
    tx_time = (field.x * math.sin(angle) + field.z * math.cos(angle)) / c + tx_time_offset(spec, angle)
    weights = transmit_weight(field, spec, angle, tx_apod)
    half_kl = spec.wavenumber * spec.element_width / 2
    impulses = _deposit(field.x, field.z, field.amplitudes, tx_time, weights,
                        spec.element_positions(), c, fs, half_kl, n_samples)
    centre = len(pulse) // 2
    full = signal.fftconvolve(impulses, pulse[None, :], axes=1)
    return full[:, centre:centre + n_samples]


@lru_cache(maxsize=8)
def antialias_filter(factor: int) -> np.ndarray:
    """Linear-phase low-pass FIR for decimation by ``factor``.

    Passband to 0.8 x the output Nyquist frequency, stopband from the output
    Nyquist frequency, >= 65 dB attenuation. Length is ``2 * factor * q + 1``
    so the group delay is a whole number of output samples.
    """
    nyq_out = 0.5 / factor  # in cycles/sample of the input
    width = nyq_out * 0.2
    numtaps, beta = signal.kaiserord(65.0, 2 * width)
    q = int(math.ceil((numtaps - 1) / (2 * factor)))
    numtaps = 2 * factor * q + 1
    return signal.firwin(numtaps, 0.9 * nyq_out, window=("kaiser", beta), fs=1.0)


def decimate(data, factor: int):
    """Anti-alias filter and keep every ``factor``-th sample along the last axis.

    Accepts an array or a :class:`ChannelDataset`. Sample 0 keeps its time
    stamp; trailing samples that do not fill a full output period are dropped.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if isinstance(data, ChannelDataset):
        return replace(data, samples=decimate(data.samples, factor),
                       sampling_frequency=data.sampling_frequency / factor)
    data = np.asarray(data, dtype=float)
    if factor == 1:
        return data.copy()
    h = antialias_filter(factor)
    q = (len(h) - 1) // (2 * factor)
    n_out = data.shape[-1] // factor
    y = signal.upfirdn(h, data, down=factor, axis=-1)
    return np.ascontiguousarray(y[..., q:q + n_out])


def required_record_depth(field: ScattererField, spec: TransducerSpec, sequence: ImagingSequence,
                          margin: float = 2e-3) -> float:
    """Depth whose two-way time covers every echo of ``field`` plus ``margin``."""
    if len(field) == 0:
        return margin
    c = spec.sound_speed
    xe = spec.element_positions()
    latest = 0.0
    for angle in set(ev.steering_angle for ev in sequence.events):
        tx = (field.x * math.sin(angle) + field.z * math.cos(angle)) / c + tx_time_offset(spec, angle)
        rx = np.maximum(np.hypot(field.x - xe[0], field.z), np.hypot(field.x - xe[-1], field.z)) / c
        latest = max(latest, float(np.max(tx + rx)))
    return latest * c / 2 + margin


def simulate_sequence(field, spec: TransducerSpec, sequence: ImagingSequence, tx_apod,
                      record_depth: float, motion=None) -> ChannelDataset:
    """Simulate every event of ``sequence`` and decimate to the output rate.

    ``field`` is either a :class:`ScattererField` (static) or a callable
    mapping the event index to the field at that transmit; ``motion``, if
    given, is a callable ``field -> field`` applied before each event after the
    first (inter-transmit motion, applied to the updated positions).
    """
    pulse = pulse_waveform(PulseModel.from_spec(spec), spec.sim_sampling_frequency)
    factor = spec.decimation_factor
    panels = []
    current = field
    for k, event in enumerate(sequence.events):
        if callable(field):
            current = field(k)
        elif motion is not None and k > 0:
            current = motion(current)
        panel = simulate_event(current, spec, event, tx_apod, record_depth, pulse)
        panels.append(decimate(panel, factor))
    return ChannelDataset(np.stack(panels), spec.sim_sampling_frequency / factor, 0.0, sequence)


def signal_power(samples: np.ndarray, threshold: float = 0.01) -> float:
    """Mean square of the samples whose magnitude exceeds ``threshold`` x peak."""
    mag = np.abs(samples)
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        raise ValueError("dataset carries no signal")
    sel = samples[mag > threshold * peak]
    return float(np.mean(sel * sel))


def noise_sigma(samples: np.ndarray, snr_db: float) -> float:
    return math.sqrt(signal_power(samples) / 10 ** (snr_db / 10))


def unit_noise(shape, seed) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def add_noise_for_snr(dataset: ChannelDataset, snr_db: float, seed) -> ChannelDataset:
    """Add white Gaussian noise so the raw RF has the requested SNR.

    ``snr_db = inf`` returns the dataset unchanged. A fixed seed gives the same
    unit-variance realisation for every SNR, scaled by the noise level.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return dataset
    sigma = noise_sigma(dataset.samples, snr_db)
    noisy = dataset.samples + sigma * unit_noise(dataset.samples.shape, seed)
    return replace(dataset, samples=noisy)
