import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pwstrain.probe import TransducerSpec

settings.register_profile("pwstrain", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pwstrain")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def spec():
    return TransducerSpec()


@pytest.fixture(scope="session")
def small_spec():
    """64-element aperture for quick end-to-end checks."""
    return TransducerSpec(element_count=64)


def band_limited_frame(shape, f_axial=0.25, seed=0, band=0.6):
    """Random RF-like frame: white noise band-passed along axis 0 around ``f_axial`` cycles/sample."""
    rng = np.random.default_rng(seed)
    n0, n1 = shape
    pad = 64
    noise = rng.standard_normal((n0 + 2 * pad, n1))
    spec = np.fft.rfft(noise, axis=0)
    f = np.fft.rfftfreq(n0 + 2 * pad)
    sigma = band * f_axial / (2 * math.sqrt(2 * math.log(2)))
    spec *= np.exp(-0.5 * ((f - f_axial) / sigma) ** 2)[:, None]
    rf = np.fft.irfft(spec, n=n0 + 2 * pad, axis=0)
    # mild lateral correlation
    k = np.exp(-0.5 * (np.arange(-3, 4) / 1.2) ** 2)
    rf = np.apply_along_axis(lambda r: np.convolve(r, k / k.sum(), mode="same"), 1, rf)
    return rf, pad


def shifted_frame(shape, shift_axial, f_axial=0.25, seed=0, shift_lateral=0):
    """Reference frame and a copy shifted by a (fractional) number of axial pixels.

    The shift is applied exactly in the Fourier domain along axis 0, so the
    moving frame is the band-limited reference resampled at ``i - shift``.
    """
    rf, pad = band_limited_frame(shape, f_axial, seed)
    n = rf.shape[0]
    f = np.fft.rfftfreq(n)
    spec = np.fft.rfft(rf, axis=0)
    moved = np.fft.irfft(spec * np.exp(-2j * np.pi * f * shift_axial)[:, None], n=n, axis=0)
    moved = np.roll(moved, shift_lateral, axis=1)
    return rf[pad:-pad], moved[pad:-pad]


def zero_lattice(extent=(13e-3, 13e-3), origin=(0.0, 15e-3)):
    """0 deg tracking lattice (0.152 x 0.054 mm) over a beamforming grid."""
    from pwstrain.beamform import make_grid
    from pwstrain.tracking import TrackingParams, make_tracking_grid

    return make_tracking_grid(make_grid(0.0, origin, extent), TrackingParams())


def cylinder_case(d=24e-6, ri=3e-3, ro=6e-3, center=(0.0, 15e-3)):
    """Exact 1/R field on the 0 deg lattice, its strain and the wall-interior mask.

    The 1/R law is continued beyond the outer wall so no window sees the
    static-background step. The interior keeps lattice points at least half
    the largest LSQSE window (0.81 mm) from both wall boundaries.
    """
    from pwstrain.metrics import VesselDeformation, ground_truth_displacement
    from pwstrain.strain import LATERAL_WINDOW, strain_tensor

    grid = zero_lattice()
    model = VesselDeformation(center, ri, ro, d)
    disp = ground_truth_displacement(VesselDeformation(center, ri, np.inf, d), grid)
    strain = strain_tensor(disp)
    x, z = grid.positions()
    r = np.hypot(x - center[0], z - center[1])
    margin = max(LATERAL_WINDOW[1], 1.52e-3) / 2
    interior = (r >= ri + margin) & (r <= ro - margin)
    return grid, model, disp, strain, r, interior


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
