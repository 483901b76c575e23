import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pwstrain.beamform import BeamformedFrame, envelope, make_grid
from pwstrain.tracking import (DisplacementField, TrackingGrid, TrackingParams, ccf_fine_subsample, make_tracking_grid,
                               median_filter2d, ncc_coarse, odd_count, parabolic_offset, two_step_track)

from conftest import band_limited_frame, shifted_frame

F_AXIAL = 2 * 18e-6 * 5.3e6 / 1540  # carrier in cycles per axial pixel
BEAM = make_grid(0.0, (0.0, 15e-3), (301 * 18e-6, 121 * 46e-6))
PARAMS = TrackingParams()
GRID = make_tracking_grid(BEAM, PARAMS)


def _frames(shift_axial=0.0, shift_lateral=0, seed=0):
    ref, mov = shifted_frame(BEAM.shape, shift_axial, F_AXIAL, seed, shift_lateral)
    return BeamformedFrame(ref, BEAM), BeamformedFrame(mov, BEAM)


def test_params_validation():
    with pytest.raises(ValueError):
        TrackingParams(coarse_kernel=(0.0, 1e-3))
    with pytest.raises(ValueError):
        TrackingParams(subsample="spline")
    assert PARAMS.output_grid_step == (0.152e-3, 0.054e-3)


def test_odd_count():
    assert odd_count(1.52e-3, 0.152e-3) == 11
    assert odd_count(0.3e-3, 0.054e-3) == 7
    assert odd_count(0.8e-3, 18e-6) == 45


def test_tracking_grid_inside_frame():
    rows, cols = GRID.pixel_centers()
    assert rows.min() >= 0 and rows.max() < BEAM.n_axial
    assert GRID.axial_step == 0.152e-3 and GRID.lateral_step == 0.054e-3
    x, z = GRID.positions()
    ca, cl = GRID.center_index
    assert (x[int(ca), int(cl)], z[int(ca), int(cl)]) == BEAM.origin


def test_identical_frames_zero_quality_one():
    ref, _ = _frames()
    coarse = ncc_coarse(envelope(ref), envelope(ref), PARAMS, GRID)
    assert not coarse.u_axial.any() and not coarse.u_lateral.any()
    np.testing.assert_allclose(coarse.quality, 1.0, atol=1e-6)
    fine = ccf_fine_subsample(ref.rf, ref.rf, coarse, PARAMS, GRID)
    np.testing.assert_allclose(fine.u_axial, 0.0, atol=1e-12)
    np.testing.assert_allclose(fine.u_lateral, 0.0, atol=1e-12)
    np.testing.assert_allclose(fine.quality, 1.0, atol=1e-6)
    full = two_step_track(ref, ref, PARAMS)
    assert np.abs(full.u_axial).max() <= 1e-12 and np.abs(full.u_lateral).max() <= 1e-12


def test_integer_shift_coarse():
    ref, _ = _frames()
    mov = BeamformedFrame(np.roll(ref.rf, 3, axis=0), BEAM)
    coarse = ncc_coarse(envelope(ref), envelope(mov), PARAMS, GRID)
    inner = (slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(coarse.u_axial[inner], 3 * BEAM.axial_step, rtol=1e-12)
    np.testing.assert_allclose(coarse.u_lateral[inner], 0.0)
    np.testing.assert_allclose(coarse.quality[inner], 1.0, atol=1e-3)


def test_integer_shift_quality_one_on_rf():
    ref, _ = _frames()
    mov = np.roll(np.roll(ref.rf, -2, axis=0), 1, axis=1)
    coarse = ncc_coarse(envelope(ref), envelope(BeamformedFrame(mov, BEAM)), PARAMS, GRID)
    fine = ccf_fine_subsample(ref.rf, mov, coarse, PARAMS, GRID)
    inner = (slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(fine.quality[inner], 1.0, atol=1e-6)
    np.testing.assert_allclose(fine.u_axial[inner], -2 * BEAM.axial_step, atol=1e-12)
    np.testing.assert_allclose(fine.u_lateral[inner], BEAM.lateral_step, atol=1e-12)


def test_degenerate_patch():
    flat = np.ones(BEAM.shape)
    coarse = ncc_coarse(flat, flat, PARAMS, GRID)
    assert not coarse.u_axial.any() and not coarse.quality.any()


def test_kernel_larger_than_frame():
    tiny = make_grid(0.0, (0.0, 15e-3), (0.3e-3, 0.3e-3))
    g = TrackingGrid(tiny, 0.152e-3, 0.054e-3, 1, 1)
    with pytest.raises(ValueError, match="kernel"):
        ncc_coarse(np.ones(tiny.shape), np.ones(tiny.shape), PARAMS, g)


def test_parabolic_offset():
    assert parabolic_offset(0.5, 1.0, 0.5) == 0.0
    assert parabolic_offset(0.0, 1.0, 0.5) == pytest.approx(0.5 * (0.0 - 0.5) / (0.0 - 2 + 0.5))
    assert parabolic_offset(1.0, 1.0, 1.0) == 0.0


@pytest.mark.parametrize("subsample", ["coupled", "separable"])
def test_quarter_pixel_shift(subsample):
    params = TrackingParams(subsample=subsample)
    ref, mov = _frames(0.25)
    field = two_step_track(ref, mov, params, GRID)
    est = np.median(field.u_axial) / BEAM.axial_step
    assert abs(est - 0.25) < 0.05


def test_antisymmetry():
    ref, mov = _frames(0.4, seed=2)
    fwd = two_step_track(ref, mov, PARAMS, GRID)
    bwd = two_step_track(mov, ref, PARAMS, GRID)
    inner = (slice(2, -2), slice(2, -2))
    diff = (fwd.u_axial + bwd.u_axial)[inner] / BEAM.axial_step
    assert np.median(np.abs(diff)) < 0.1


@settings(max_examples=8)
@given(st.floats(0.2, 5.0), st.floats(-3.0, 3.0), st.floats(0.2, 5.0), st.floats(-3.0, 3.0))
def test_ncc_affine_invariance(a, b, c, d):
    ref, mov = _frames(1.3, seed=1)
    e_ref, e_mov = envelope(ref), envelope(mov)
    base = ncc_coarse(e_ref, e_mov, PARAMS, GRID)
    scaled = ncc_coarse(a * e_ref + b, c * e_mov + d, PARAMS, GRID)
    np.testing.assert_array_equal(scaled.u_axial, base.u_axial)
    np.testing.assert_array_equal(scaled.u_lateral, base.u_lateral)
    np.testing.assert_allclose(scaled.quality, base.quality, atol=1e-9)
    fine = ccf_fine_subsample(ref.rf, mov.rf, base, PARAMS, GRID)
    fine2 = ccf_fine_subsample(a * ref.rf + b, c * mov.rf + d, base, PARAMS, GRID)
    np.testing.assert_allclose(fine2.u_axial, fine.u_axial, atol=1e-9 * BEAM.axial_step)
    np.testing.assert_allclose(fine2.quality, fine.quality, atol=1e-9)


def _field(values, grid=GRID):
    values = np.asarray(values, float)
    return DisplacementField(values, values.copy(), np.zeros_like(values), grid)


def test_median_constant_and_spike():
    const = _field(np.full(GRID.shape, 2e-6))
    np.testing.assert_array_equal(median_filter2d(const, (0.3e-3, 0.15e-3)).u_axial, const.u_axial)
    spiky = np.zeros(GRID.shape)
    spiky[5, 5] = 1.0
    window = (3 * GRID.axial_step, 3 * GRID.lateral_step)
    out = median_filter2d(_field(spiky), window)
    assert not out.u_axial.any()
    q = np.random.default_rng(0).uniform(-1, 1, GRID.shape)
    f = DisplacementField(spiky, spiky, q, GRID)
    np.testing.assert_array_equal(median_filter2d(f, window).quality, q)
    with pytest.raises(ValueError):
        median_filter2d(f, (GRID.axial_step / 2, GRID.lateral_step))


def test_median_idempotent_on_blocks():
    blocks = np.zeros(GRID.shape)
    blocks[: GRID.shape[0] // 2] = 1.0
    blocks[:, : GRID.shape[1] // 2] += 2.0
    window = (3 * GRID.axial_step, 3 * GRID.lateral_step)
    once = median_filter2d(_field(blocks), window)
    twice = median_filter2d(once, window)
    np.testing.assert_array_equal(once.u_axial, twice.u_axial)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
def test_median_within_input_range(seed, ha, hl):
    v = np.random.default_rng(seed).standard_normal(GRID.shape)
    out = median_filter2d(_field(v), ((2 * ha + 1) * GRID.axial_step, (2 * hl + 1) * GRID.lateral_step)).u_axial
    assert out.min() >= v.min() and out.max() <= v.max()


def test_frames_must_share_grid():
    ref, mov = _frames()
    other = make_grid(0.1, BEAM.origin, (301 * 18e-6, 121 * 46e-6))
    with pytest.raises(ValueError):
        two_step_track(ref, BeamformedFrame(mov.rf, other), PARAMS)


def test_band_limited_helper_is_band_limited():
    rf, _ = band_limited_frame((256, 8), F_AXIAL)
    spec = np.abs(np.fft.rfft(rf, axis=0)).mean(axis=1)
    f = np.fft.rfftfreq(rf.shape[0])
    assert abs(f[np.argmax(spec)] - F_AXIAL) < 0.03
