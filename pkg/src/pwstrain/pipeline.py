"""End-to-end experiment stages with content-hash caching.

Each stage reads only files written by the previous stage (plus the config),
writes its outputs atomically and records a stamp under ``.cache``; a stage
whose config sections and input hashes are unchanged is skipped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from . import io
from .beamform import beamform_medium, envelope
from .config import ExperimentConfig
from .dispcomp import compound_displacement
from .metrics import (RigidMotion, VesselDeformation, error_report, ground_truth_displacement, psf_report)
from .phantom import RadialMotionModel, apply_radial_motion, apply_rigid_shift, single_scatterer, vessel_phantom
from .rfsim import add_noise_for_snr, required_record_depth, simulate_sequence
from .strain import StrainField, strain_tensor
from .tracking import two_step_track

log = logging.getLogger(__name__)

STAGES = ("simulate", "beamform", "track", "strain", "metrics")
NOISE_TAG = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# experiment model

def medium_names(angles) -> list[str]:
    angles = list(angles)
    if len(angles) == 3 and angles[1] == 0 and math.isclose(angles[0], -angles[2]) and angles[2] > 0:
        return ["minus", "zero", "plus"]
    return [f"m{k}" for k in range(len(angles))]


def build_phantom(cfg: ExperimentConfig, seed: int):
    p = cfg.phantom
    if p.kind == "point":
        return single_scatterer(p.point_position[1], p.point_position[0])
    return vessel_phantom(p.center, p.inner_diameter, p.outer_diameter, p.wall_density, p.bg_extent,
                          p.bg_density, p.bg_level, seed, cfg.probe.spec().wavelength)


class MotionTimeline:
    """Scatterer field at transmit index ``t`` (counted from the first event of frame 0).

    Radial motion is stepped sequentially from the current positions, so
    ``at`` must be called with non-decreasing ``t``.
    """

    def __init__(self, base, cfg: ExperimentConfig):
        self.base = base
        self.motion = cfg.motion
        self._t = 0
        self._field = base
        if self.motion.kind == "radial":
            p = cfg.phantom
            self._model = RadialMotionModel(p.center, p.inner_diameter / 2, self.motion.step,
                                            self.motion.bin_width or None)

    def at(self, t: int):
        m = self.motion
        if m.kind == "none":
            return self.base
        if m.kind == "rigid":
            frames = t // m.frame_interval
            shift = (frames * m.shift[0] + t * m.drift[0], frames * m.shift[1] + t * m.drift[1])
            if shift == (0.0, 0.0):
                return self.base
            return apply_rigid_shift(self.base, shift)
        if t < self._t:
            raise ValueError("radial motion can only move forward in time")
        while self._t < t:
            self._field = apply_radial_motion(self._field, self._model)
            self._t += 1
        return self._field


def truth_model(cfg: ExperimentConfig):
    m, p = cfg.motion, cfg.phantom
    if m.kind == "radial":
        return VesselDeformation(p.center, p.inner_diameter / 2, p.outer_diameter / 2, m.frame_interval * m.step)
    if m.kind == "rigid":
        return RigidMotion((m.shift[0] + m.frame_interval * m.drift[0], m.shift[1] + m.frame_interval * m.drift[1]))
    return RigidMotion((0.0, 0.0))


def wall_mask(cfg: ExperimentConfig, grid):
    """Lattice points inside the wall annulus, shrunk by ``metrics.wall_margin``."""
    p = cfg.phantom
    x, z = grid.positions()
    r = np.hypot(x - p.center[0], z - p.center[1])
    mg = cfg.metrics.wall_margin
    return (r >= p.inner_diameter / 2 + mg) & (r <= p.outer_diameter / 2 - mg)


def simulate_frames(cfg: ExperimentConfig, seed: int, sequence=None, n_frames: int = 2, base=None):
    """Noise-free channel data of consecutive frames under the configured motion."""
    spec = cfg.probe.spec()
    seq = cfg.sequence.build() if sequence is None else sequence
    apod = cfg.sequence.tx_apodization(spec.element_count)
    base = build_phantom(cfg, seed) if base is None else base
    timeline = MotionTimeline(base, cfg)
    depth = required_record_depth(base, spec, seq, margin=3e-3)
    out = []
    for f in range(n_frames):
        t0 = f * cfg.motion.frame_interval
        out.append(simulate_sequence(lambda k, t0=t0: timeline.at(t0 + k), spec, seq, apod, depth))
    return out


def noise_seed(seed: int, frame: int):
    return np.random.SeedSequence([seed, NOISE_TAG, frame])


def n_frames(cfg: ExperimentConfig) -> int:
    return 1 if cfg.phantom.kind == "point" else 2


# caching

def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _rel(out: Path, p: Path) -> str:
    return p.relative_to(out).as_posix()


def _run_stage(out: Path, stage: str, payload: dict, inputs: list[Path], fn, force: bool = False):
    for p in inputs:
        if not p.exists():
            raise StageError(stage, f"missing input {_rel(out, p)}; run the earlier stages first")
    key = _hash_json({"stage": stage, "version": __version__, "payload": payload,
                      "inputs": {_rel(out, p): io.file_sha256(p) for p in inputs}})
    stamp = out / ".cache" / f"{stage}.json"
    if stamp.exists() and not force:
        rec = json.loads(stamp.read_text())
        if rec.get("key") == key and all((out / r).exists() and io.file_sha256(out / r) == h
                                         for r, h in rec["outputs"].items()):
            log.info("%s: inputs unchanged, reusing %d outputs", stage, len(rec["outputs"]))
            return rec
    try:
        outputs = fn()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    rec = {"key": key, "outputs": {_rel(out, p): io.file_sha256(p) for p in sorted(outputs)}}
    io.write_text(stamp, json.dumps(rec, sort_keys=True, indent=2) + "\n")
    return rec


def write_manifest(cfg: ExperimentConfig, out: Path):
    conf = cfg.to_dict()
    conf["output"].pop("directory")
    seed = cfg.run.seed
    stages = {}
    for s in STAGES:
        stamp = out / ".cache" / f"{s}.json"
        if stamp.exists():
            stages[s] = json.loads(stamp.read_text())["outputs"]
    manifest = {
        "config": conf,
        "seeds": {"run": seed, "phantom": seed,
                  "noise": [list(noise_seed(seed, f).entropy) for f in range(n_frames(cfg))]},
        "versions": {"pwstrain": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__, "python": platform.python_version()},
        "stages": stages,
    }
    io.write_text(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


# stages

def _frame_path(out, f):
    return out / "channel" / f"frame{f}.chrf"


def _bf_path(out, f, name, kind):
    return out / "beamformed" / f"frame{f}_{name}_{kind}.bfrf"


def stage_simulate(cfg: ExperimentConfig, out: Path, force=False):
    seed = cfg.run.seed
    nf = n_frames(cfg)

    def run():
        base = build_phantom(cfg, seed)
        written = [out / "phantom.sctf"]
        io.write_sctf(written[0], base)
        for f, ds in enumerate(simulate_frames(cfg, seed, n_frames=nf, base=base)):
            ds = add_noise_for_snr(ds, cfg.noise.snr, noise_seed(seed, f))
            io.write_chrf(_frame_path(out, f), ds)
            written.append(_frame_path(out, f))
        return written

    payload = {**cfg.section("probe", "sequence", "phantom", "motion", "noise"), "seed": seed}
    return _run_stage(out, "simulate", payload, [], run, force)


def stage_beamform(cfg: ExperimentConfig, out: Path, force=False):
    nf = n_frames(cfg)
    inputs = [_frame_path(out, f) for f in range(nf)]

    def run():
        spec = cfg.probe.spec()
        seq = cfg.sequence.build()
        mediums = cfg.sequence.mediums()
        grids = cfg.beamform.grids(mediums)
        written = []
        for f in range(nf):
            ds = io.read_chrf(_frame_path(out, f), seq)
            if ds.samples.shape[1] != spec.element_count:
                raise StageError("beamform", "channel data element count does not match the probe")
            for name, grid in zip(medium_names(mediums), grids):
                comp, single = beamform_medium(ds, spec, grid, cfg.beamform.fov)
                for kind, fr in (("compounded", comp), ("single", single)):
                    io.write_bfrf(_bf_path(out, f, name, kind), fr)
                    written.append(_bf_path(out, f, name, kind))
                if cfg.output.images:
                    env = envelope(comp)
                    db = 20 * np.log10(np.maximum(env / env.max(), 1e-6))
                    img = out / "images" / f"bmode_frame{f}_{name}.pgm"
                    io.write_pgm(img, db, -50.0, 0.0, {"field": "envelope", "units": "dB re max"})
                    written += [img, Path(str(img) + ".txt")]
        return written

    return _run_stage(out, "beamform", {**cfg.section("probe", "sequence", "beamform"), "images": cfg.output.images}, inputs, run, force)


def stage_track(cfg: ExperimentConfig, out: Path, force=False):
    if n_frames(cfg) < 2:
        raise StageError("track", "tracking needs two frames; the point phantom simulates one")
    names = medium_names(cfg.sequence.mediums())
    inputs = [_bf_path(out, f, n, "compounded") for n in names for f in (0, 1)]

    def run():
        params = cfg.tracking.params()
        written = []
        fields = {}
        for name in names:
            ref = io.read_bfrf(_bf_path(out, 0, name, "compounded"))
            mov = io.read_bfrf(_bf_path(out, 1, name, "compounded"))
            disp = two_step_track(ref, mov, params)
            fields[name] = disp
            p = out / "displacement" / f"{name}.disp"
            io.write_disp(p, disp)
            io.write_field_csv(p.with_suffix(".csv"), disp.grid,
                               {"u_axial": disp.u_axial, "u_lateral": disp.u_lateral, "quality": disp.quality})
            written += [p, p.with_suffix(".csv")]
        if names != ["minus", "zero", "plus"]:
            raise StageError("track", "displacement compounding needs mediums at -t, 0 and +t")
        vec, rms = compound_displacement(fields["minus"], fields["zero"], fields["plus"])
        p = out / "displacement" / "vector.disp"
        io.write_disp(p, vec)
        io.write_field_csv(p.with_suffix(".csv"), vec.grid, {"u_x": vec.u_x, "u_z": vec.u_z, "valid": vec.valid})
        c = out / "displacement" / "consistency.csv"
        io.write_csv(c, ["axial_rms_discrepancy_m"], [[rms]])
        return written + [p, p.with_suffix(".csv"), c]

    return _run_stage(out, "track", cfg.section("tracking"), inputs, run, force)


STRAIN_COLUMNS = ("e_xx", "e_zz", "e_xz", "p_max", "p_min", "p_angle")


def read_strain_csv(path, grid) -> StrainField:
    cols = io.read_csv(path)
    arrays = [cols[c].reshape(grid.shape) for c in STRAIN_COLUMNS]
    return StrainField(*arrays, cols["valid"].reshape(grid.shape) > 0.5, grid)


def stage_strain(cfg: ExperimentConfig, out: Path, force=False):
    src = out / "displacement" / "vector.disp"

    def run():
        vec = io.read_disp(src)
        s = strain_tensor(vec, cfg.strain.axial_window, cfg.strain.lateral_window)
        p = out / "strain" / "strain.csv"
        io.write_field_csv(p, vec.grid, {**{c: getattr(s, c) for c in STRAIN_COLUMNS}, "valid": s.valid})
        written = [p]
        if cfg.output.images:
            lim = cfg.strain.image_limit
            for c in ("e_xx", "e_zz", "p_max", "p_min"):
                img = out / "images" / f"strain_{c}.ppm"
                io.write_ppm(img, getattr(s, c), -lim, lim, {"field": c, "units": "strain"})
                written += [img, Path(str(img) + ".txt")]
        return written

    return _run_stage(out, "strain", {**cfg.section("strain"), "images": cfg.output.images}, [src], run, force)


def stage_metrics(cfg: ExperimentConfig, out: Path, force=False):
    names = medium_names(cfg.sequence.mediums())
    if cfg.phantom.kind == "point":
        inputs = [_bf_path(out, 0, n, k) for n in names for k in ("compounded", "single")]
    else:
        inputs = [out / "displacement" / "vector.disp", out / "strain" / "strain.csv"]

    def run():
        dst = out / "metrics" / ("psf.csv" if cfg.phantom.kind == "point" else "errors.csv")
        lam = cfg.probe.spec().wavelength
        if cfg.phantom.kind == "point":
            rows = []
            for n in names:
                for k in ("compounded", "single"):
                    fr = io.read_bfrf(_bf_path(out, 0, n, k))
                    r = psf_report(envelope(fr), fr.grid, lam, cfg.metrics.psf_radius)
                    rows.append([n, k, r.cr_db, r.fwhm_axial, r.fwhm_lateral, *r.peak_position])
            io.write_csv(dst, ["medium", "frame", "cr_db", "fwhm_ax_m", "fwhm_lat_m", "peak_x", "peak_z"], rows)
            return [dst]
        vec = io.read_disp(inputs[0])
        strain = read_strain_csv(inputs[1], vec.grid)
        model = truth_model(cfg)
        mask = wall_mask(cfg, vec.grid) if cfg.metrics.region == "wall" else None
        rep = error_report(vec, strain, model, mask, cfg.noise.snr)
        truth = ground_truth_displacement(model, vec.grid)
        m = vec.valid & (np.ones(vec.grid.shape, bool) if mask is None else mask)
        means = [float(np.mean(a[m])) for a in (vec.u_x, vec.u_z, truth.u_x, truth.u_z)]
        io.write_csv(dst, ["snr_db", "rmse_ux", "rmse_uz", "rmse_exx", "rmse_ezz", "mask_fraction",
                           "mean_ux", "mean_uz", "truth_mean_ux", "truth_mean_uz"],
                     [[rep.snr_db, rep.rmse_u_lateral, rep.rmse_u_axial, rep.rmse_strain_lateral,
                       rep.rmse_strain_axial, rep.mask_fraction, *means]])
        return [dst]

    payload = cfg.section("probe", "phantom", "motion", "noise", "metrics")
    return _run_stage(out, "metrics", payload, inputs, run, force)


STAGE_FUNCS = {"simulate": stage_simulate, "beamform": stage_beamform, "track": stage_track,
               "strain": stage_strain, "metrics": stage_metrics}


def run_stage(cfg: ExperimentConfig, stage: str, out=None, force: bool = False) -> Path:
    out = Path(out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    STAGE_FUNCS[stage](cfg, out, force)
    write_manifest(cfg, out)
    return out


def run_pipeline(cfg: ExperimentConfig, out=None, force: bool = False) -> Path:
    """Run every applicable stage in order; returns the artifact directory."""
    out = Path(out or cfg.output.directory)
    stages = STAGES if n_frames(cfg) > 1 else ("simulate", "beamform", "metrics")
    for s in stages:
        log.info("stage %s", s)
        run_stage(cfg, s, out, force)
    return out
