import numpy as np
import pytest

from pwstrain import io
from pwstrain.beamform import BeamformedFrame, make_grid
from pwstrain.dispcomp import VectorDisplacementField
from pwstrain.phantom import ScattererField
from pwstrain.rfsim import ChannelDataset
from pwstrain.tracking import DisplacementField

from conftest import zero_lattice

RNG = np.random.default_rng(0)


def f32(a):
    return np.asarray(a, np.float32).astype(float)


def test_chrf_round_trip(tmp_path):
    ds = ChannelDataset(RNG.standard_normal((3, 8, 50)), 21.2e6, 1.5e-6)
    io.write_chrf(tmp_path / "a.chrf", ds)
    back = io.read_chrf(tmp_path / "a.chrf")
    np.testing.assert_array_equal(back.samples, f32(ds.samples))
    assert back.sampling_frequency == ds.sampling_frequency and back.t0 == ds.t0


def test_bfrf_round_trip(tmp_path):
    g = make_grid(0.3, (1e-3, 15e-3), (1e-3, 2e-3))
    frame = BeamformedFrame(RNG.standard_normal(g.shape), g)
    io.write_bfrf(tmp_path / "a.bfrf", frame)
    back = io.read_bfrf(tmp_path / "a.bfrf")
    assert back.grid == g
    np.testing.assert_array_equal(back.rf, f32(frame.rf))


def test_disp_round_trip(tmp_path):
    grid = zero_lattice(extent=(3e-3, 3e-3))
    a, b, q = RNG.standard_normal((3, *grid.shape))
    io.write_disp(tmp_path / "m.disp", DisplacementField(a, b, q, grid))
    back = io.read_disp(tmp_path / "m.disp")
    assert isinstance(back, DisplacementField) and back.grid.shape == grid.shape
    assert back.grid.beam_grid == grid.beam_grid
    np.testing.assert_array_equal(back.u_lateral, f32(b))
    valid = a > 0
    io.write_disp(tmp_path / "v.disp", VectorDisplacementField(np.where(valid, a, np.nan), b, valid, grid))
    vec = io.read_disp(tmp_path / "v.disp")
    assert isinstance(vec, VectorDisplacementField)
    np.testing.assert_array_equal(vec.valid, valid)
    np.testing.assert_array_equal(vec.u_x[valid], f32(a)[valid])
    assert np.isnan(vec.u_z[~valid]).all()
    with pytest.raises(TypeError):
        io.write_disp(tmp_path / "x.disp", object())


def test_sctf_round_trip(tmp_path):
    field = ScattererField(RNG.uniform(0, 1e-2, (20, 2)), RNG.standard_normal(20), RNG.integers(0, 3, 20))
    io.write_sctf(tmp_path / "p.sctf", field)
    back = io.read_sctf(tmp_path / "p.sctf")
    np.testing.assert_array_equal(back.positions, field.positions)
    np.testing.assert_array_equal(back.amplitudes, field.amplitudes)
    np.testing.assert_array_equal(back.labels, field.labels)


def test_bad_magic_and_truncation(tmp_path):
    g = make_grid(0.0, (0.0, 15e-3), (1e-3, 1e-3))
    io.write_bfrf(tmp_path / "a.bfrf", BeamformedFrame(np.zeros(g.shape), g))
    with pytest.raises(io.FormatError):
        io.read_chrf(tmp_path / "a.bfrf")
    data = (tmp_path / "a.bfrf").read_bytes()
    (tmp_path / "b.bfrf").write_bytes(data[:-10])
    with pytest.raises(io.FormatError):
        io.read_bfrf(tmp_path / "b.bfrf")


def test_csv_round_trip(tmp_path):
    rows = [[1, 0.5, float("nan"), "a"], [2, 1e-7, 3.0, "b"]]
    io.write_csv(tmp_path / "t.csv", ["i", "x", "y", "s"], rows)
    text = (tmp_path / "t.csv").read_text()
    assert text.splitlines() == ["i,x,y,s", "1,0.5,nan,a", "2,1e-07,3,b"]
    grid = zero_lattice(extent=(2e-3, 2e-3))
    v = RNG.standard_normal(grid.shape)
    io.write_field_csv(tmp_path / "f.csv", grid, {"v": v})
    back = io.read_csv(tmp_path / "f.csv")
    assert set(back) == {"x", "z", "v"}
    np.testing.assert_allclose(back["v"], v.ravel(), rtol=1e-9)


def test_images_and_sidecar(tmp_path):
    v = np.linspace(-1, 1, 12).reshape(3, 4)
    v[0, 0] = np.nan
    io.write_pgm(tmp_path / "a.pgm", v, -1, 1, {"unit": "strain"})
    img = io.read_pnm(tmp_path / "a.pgm")
    assert img.shape == (3, 4) and img[0, 0] == 0 and img[-1, -1] == 255
    side = (tmp_path / "a.pgm.txt").read_text()
    assert "colormap = gray" in side and "vmin = -1" in side and "unit = strain" in side
    io.write_ppm(tmp_path / "a.ppm", v, -1, 1)
    rgb = io.read_pnm(tmp_path / "a.ppm")
    assert rgb.shape == (3, 4, 3)
    assert tuple(rgb[0, 0]) == (0, 0, 0) and tuple(rgb[-1, -1]) == (255, 0, 0)
    with pytest.raises(ValueError):
        io.write_pgm(tmp_path / "b.pgm", v, 1, 1)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "x.txt"
    io.write_text(target, "old")
    with pytest.raises(RuntimeError):
        with io.atomic_open(target, "w") as fh:
            fh.write("new")
            raise RuntimeError
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]
