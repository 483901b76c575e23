"""Binary, CSV and portable-image artifacts; every writer replaces its target atomically."""

from __future__ import annotations

import contextlib
import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .beamform import BeamformedFrame, BeamGrid
from .dispcomp import VectorDisplacementField
from .phantom import ScattererField
from .rfsim import ChannelDataset
from .tracking import DisplacementField, TrackingGrid

VERSION = 1
DISP_MEDIUM = 0
DISP_VECTOR = 1

_GRID = struct.Struct("<d2d2I2d")


class FormatError(ValueError):
    """A file does not match the expected binary layout."""


@contextlib.contextmanager
def atomic_open(path, mode="wb"):
    """Write to a temporary sibling and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": "", "encoding": "utf-8"})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str):
    with atomic_open(path, "w") as fh:
        fh.write(text)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError("unexpected end of file")
    return data


def _check_magic(fh, magic: bytes):
    got = _read_exact(fh, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def _read_f32(fh, count, shape):
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
    return data.astype(np.float64).reshape(shape)


def _pack_grid(g: BeamGrid) -> bytes:
    return _GRID.pack(g.medium_angle, g.axial_step, g.lateral_step, g.n_axial, g.n_lateral, *g.origin)


def _unpack_grid(fh) -> BeamGrid:
    angle, sa, sl, na, nl, ox, oz = _GRID.unpack(_read_exact(fh, _GRID.size))
    return BeamGrid(angle, (ox, oz), sa, sl, na, nl)


# channel data

def write_chrf(path, dataset: ChannelDataset):
    ne, nel, ns = dataset.samples.shape
    with atomic_open(path) as fh:
        fh.write(b"CHRF" + struct.pack("<IIIQdd", VERSION, ne, nel, ns, dataset.sampling_frequency, dataset.t0))
        fh.write(np.ascontiguousarray(dataset.samples, dtype="<f4").tobytes())


def read_chrf(path, sequence=None) -> ChannelDataset:
    with open(path, "rb") as fh:
        _check_magic(fh, b"CHRF")
        ne, nel, ns, fs, t0 = struct.unpack("<IIQdd", _read_exact(fh, 32))
        samples = _read_f32(fh, ne * nel * ns, (ne, nel, ns))
    return ChannelDataset(samples, fs, t0, sequence)


# beamformed frames

def write_bfrf(path, frame: BeamformedFrame):
    with atomic_open(path) as fh:
        fh.write(b"BFRF" + struct.pack("<I", VERSION) + _pack_grid(frame.grid))
        fh.write(np.ascontiguousarray(frame.rf, dtype="<f4").tobytes())


def read_bfrf(path) -> BeamformedFrame:
    with open(path, "rb") as fh:
        _check_magic(fh, b"BFRF")
        grid = _unpack_grid(fh)
        rf = _read_f32(fh, grid.n_axial * grid.n_lateral, grid.shape)
    return BeamformedFrame(rf, grid)


# displacement fields

def _lattice(grid: TrackingGrid) -> BeamGrid:
    return grid.as_beam_grid()


def write_disp(path, field):
    """DISP: magic, version, kind, field count, lattice and parent-grid descriptors, f32 fields."""
    if isinstance(field, DisplacementField):
        kind, arrays = DISP_MEDIUM, (field.u_axial, field.u_lateral, field.quality)
    elif isinstance(field, VectorDisplacementField):
        kind, arrays = DISP_VECTOR, (field.u_x, field.u_z, field.valid.astype(float))
    else:
        raise TypeError(f"cannot store {type(field).__name__}")
    with atomic_open(path) as fh:
        fh.write(b"DISP" + struct.pack("<III", VERSION, kind, len(arrays)))
        fh.write(_pack_grid(_lattice(field.grid)) + _pack_grid(field.grid.beam_grid))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_disp(path):
    with open(path, "rb") as fh:
        _check_magic(fh, b"DISP")
        kind, n = struct.unpack("<II", _read_exact(fh, 8))
        lat = _unpack_grid(fh)
        beam = _unpack_grid(fh)
        grid = TrackingGrid(beam, lat.axial_step, lat.lateral_step, lat.n_axial, lat.n_lateral)
        arrays = [_read_f32(fh, lat.n_axial * lat.n_lateral, lat.shape) for _ in range(n)]
    if kind == DISP_MEDIUM and n == 3:
        return DisplacementField(*arrays, grid)
    if kind == DISP_VECTOR and n == 3:
        valid = arrays[2] > 0.5
        return VectorDisplacementField(np.where(valid, arrays[0], np.nan), np.where(valid, arrays[1], np.nan),
                                       valid, grid)
    raise FormatError(f"unknown DISP kind {kind} with {n} fields")


# scatterer fields

def write_sctf(path, field: ScattererField):
    rec = np.zeros(len(field), dtype=[("x", "<f8"), ("z", "<f8"), ("amp", "<f8"), ("label", "u1")])
    rec["x"], rec["z"], rec["amp"], rec["label"] = field.x, field.z, field.amplitudes, field.labels
    with atomic_open(path) as fh:
        fh.write(b"SCTF" + struct.pack("<IQ", VERSION, len(field)))
        fh.write(rec.tobytes())


def read_sctf(path) -> ScattererField:
    dt = np.dtype([("x", "<f8"), ("z", "<f8"), ("amp", "<f8"), ("label", "u1")])
    with open(path, "rb") as fh:
        _check_magic(fh, b"SCTF")
        (n,) = struct.unpack("<Q", _read_exact(fh, 8))
        rec = np.frombuffer(_read_exact(fh, n * dt.itemsize), dtype=dt)
    return ScattererField(np.column_stack([rec["x"], rec["z"]]), rec["amp"].copy(), rec["label"].copy())


# CSV

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if v != v else f"{v:.10g}"


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    write_text(path, "\n".join(lines) + "\n")


def write_field_csv(path, grid, columns: dict):
    """One row per lattice point: x, z, then the named 2D arrays."""
    x, z = grid.positions()
    arrays = [np.asarray(a).ravel() for a in columns.values()]
    rows = zip(x.ravel(), z.ravel(), *arrays)
    write_csv(path, ["x", "z", *columns], rows)


def read_csv(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, k] for k, name in enumerate(header)}


# portable images

def _diverging(t):
    """Blue-white-red map for t in [0, 1]."""
    t = np.clip(t, 0.0, 1.0)
    lo = np.clip(2 * t, 0, 1)
    hi = np.clip(2 * t - 1, 0, 1)
    r = np.where(t < 0.5, lo, 1.0)
    g = np.where(t < 0.5, lo, 1.0 - hi)
    b = np.where(t < 0.5, 1.0, 1.0 - hi)
    return np.stack([r, g, b], axis=-1)


def _to_unit(values, vmin, vmax):
    if not vmax > vmin:
        raise ValueError("need vmax > vmin")
    v = np.asarray(values, dtype=float)
    return np.clip((np.nan_to_num(v, nan=vmin) - vmin) / (vmax - vmin), 0, 1)


def write_pgm(path, values, vmin: float, vmax: float, sidecar: dict | None = None):
    """8-bit binary PGM; NaN maps to black."""
    img = np.rint(_to_unit(values, vmin, vmax) * 255).astype(np.uint8)
    h, w = img.shape
    with atomic_open(path) as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())
    _sidecar(path, "gray", vmin, vmax, sidecar)


def write_ppm(path, values, vmin: float, vmax: float, sidecar: dict | None = None):
    """8-bit binary PPM with the fixed blue-white-red map; NaN maps to black."""
    v = np.asarray(values, dtype=float)
    rgb = _diverging(_to_unit(v, vmin, vmax))
    rgb[~np.isfinite(v)] = 0
    write_rgb(path, np.rint(rgb * 255).astype(np.uint8))
    _sidecar(path, "blue-white-red", vmin, vmax, sidecar)


def write_rgb(path, rgb: np.ndarray):
    h, w, _ = rgb.shape
    with atomic_open(path) as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb, np.uint8).tobytes())


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, w, h, maxval, rest = data.split(maxsplit=4)
    if magic not in (b"P5", b"P6") or int(maxval) != 255:
        raise FormatError("only 8-bit binary PGM/PPM are supported")
    shape = (int(h), int(w)) + ((3,) if magic == b"P6" else ())
    return np.frombuffer(rest, np.uint8).reshape(shape)


def _sidecar(path, cmap, vmin, vmax, extra):
    lines = [f"colormap = {cmap}", f"vmin = {_fmt(vmin)}", f"vmax = {_fmt(vmax)}"]
    lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
    write_text(str(path) + ".txt", "\n".join(lines) + "\n")
