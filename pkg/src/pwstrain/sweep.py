"""Parameter sweeps: PSF quality versus nVS/theta_t and SNR, displacement RMSE versus SNR.

Noise enters after simulation, so beamformed noisy frames are formed as
``B(s) + sigma * B(n)`` from one beamformed unit-noise realisation per seed;
delay-and-sum is linear, so this equals beamforming the noisy channel data.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
import logging
import math
from pathlib import Path

import numba
import numpy as np

from . import io
from .beamform import BeamformedFrame, das_frames, envelope
from .config import ConfigError, ExperimentConfig
from .dispcomp import compound_displacement
from .metrics import error_report, psf_report
from .phantom import single_scatterer
from .pipeline import noise_seed, simulate_frames, truth_model, wall_mask
from .plot import line_plot
from .probe import build_sequence
from .rfsim import noise_sigma, unit_noise
from .strain import strain_tensor
from .tracking import two_step_track

log = logging.getLogger(__name__)

PSF_HEADER = ["nvs", "theta_t_deg", "snr_db", "seed", "cr_db", "fwhm_ax_m", "fwhm_lat_m"]
SNR_HEADER = ["method", "seed", "snr_db", "rmse_ux", "rmse_uz", "rmse_exx", "rmse_ezz", "mask_fraction"]


def compounded_rf(samples, spec, events, grid, t0, fs, fov) -> np.ndarray:
    """Coherent sum of the frames of ``events`` (sequential, in event order)."""
    frames = das_frames(samples, spec, events, grid, t0, fs, fov)
    rf = frames[0].rf.copy()
    for fr in frames[1:]:
        rf += fr.rf
    return rf


def _medium_angle(cfg: ExperimentConfig) -> float:
    a = cfg.sequence.medium_angle
    return {"minus": -a, "zero": 0.0, "plus": a}[cfg.sweep.medium]


def _psf_row(rf, grid, lam, radius):
    env = envelope(rf)
    r = psf_report(env, grid, lam, radius)
    return r.cr_db, r.fwhm_axial, r.fwhm_lateral


def psf_cell(cfg: ExperimentConfig, nvs: int, theta_t: float, snrs, seeds) -> list[list]:
    """PSF rows of one (nVS, theta_t) sequence on the sweep medium."""
    spec = cfg.probe.spec()
    medium = _medium_angle(cfg)
    seq = build_sequence([medium], nvs, theta_t, cfg.sequence.prf)
    p = cfg.phantom.point_position
    ds = simulate_frames(cfg, cfg.run.seed, seq, 1, single_scatterer(p[1], p[0]))[0]
    grid = cfg.beamform.grids([medium])[0]
    args = (spec, list(seq.events), grid, ds.t0, ds.sampling_frequency, cfg.beamform.fov)
    clean = compounded_rf(ds.samples, *args)
    lam = spec.wavelength
    rows = []
    for seed in seeds:
        noise = None
        for snr in snrs:
            rf = clean
            if not math.isinf(snr):
                if noise is None:
                    noise = compounded_rf(unit_noise(ds.samples.shape, noise_seed(seed, 0)), *args)
                rf = clean + noise_sigma(ds.samples, snr) * noise
            try:
                vals = _psf_row(rf, grid, lam, cfg.metrics.psf_radius)
            except ValueError as exc:
                log.warning("PSF nvs=%d theta_t=%.3g snr=%g seed=%d: %s", nvs, theta_t, snr, seed, exc)
                vals = (math.nan,) * 3
            rows.append([nvs, math.degrees(theta_t), snr, seed, *vals])
    return rows


def snr_cell(cfg: ExperimentConfig, method: str, seed: int, snrs) -> list[list]:
    """Displacement/strain RMSE rows of one imaging sequence and phantom seed."""
    c = replace(cfg, sequence=replace(cfg.sequence, mode=method))
    spec = c.probe.spec()
    seq = c.sequence.build()
    mediums = c.sequence.mediums()
    grids = c.beamform.grids(mediums)
    params = c.tracking.params()
    data = simulate_frames(c, seed, seq, 2)
    clean, noise = [], []
    for f, ds in enumerate(data):
        n = unit_noise(ds.samples.shape, noise_seed(seed, f))
        cs, cn = [], []
        for g in grids:
            idx = [k for k, ev in enumerate(seq.events) if ev.medium_angle == g.medium_angle]
            args = (spec, [seq.events[k] for k in idx], g, ds.t0, ds.sampling_frequency, c.beamform.fov)
            cs.append(compounded_rf(ds.samples[idx], *args))
            cn.append(compounded_rf(n[idx], *args))
        clean.append(cs)
        noise.append(cn)
        del n
    model = truth_model(c)
    rows = []
    for snr in snrs:
        sig = [0.0 if math.isinf(snr) else noise_sigma(ds.samples, snr) for ds in data]
        fields = []
        for m, g in enumerate(grids):
            ref = BeamformedFrame(clean[0][m] + sig[0] * noise[0][m], g)
            mov = BeamformedFrame(clean[1][m] + sig[1] * noise[1][m], g)
            fields.append(two_step_track(ref, mov, params))
        vec, _ = compound_displacement(*fields)
        strain = strain_tensor(vec, c.strain.axial_window, c.strain.lateral_window)
        mask = wall_mask(c, vec.grid) if c.metrics.region == "wall" else None
        r = error_report(vec, strain, model, mask, snr)
        rows.append([method, seed, snr, r.rmse_u_lateral, r.rmse_u_axial, r.rmse_strain_lateral,
                     r.rmse_strain_axial, r.mask_fraction])
        log.info("%s seed %d snr %g: rmse_ux %.3g m", method, seed, snr, r.rmse_u_lateral)
    return rows


def _pool_map(fn, cells, workers):
    if workers > 1 and numba.threading_layer() == "workqueue":
        log.warning("workqueue threading layer is not thread-safe; running cells sequentially")
        workers = 1
    if workers == 1:
        return [_guard(fn, c) for c in cells]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda c: _guard(fn, c), cells))


def _guard(fn, cell):
    try:
        return fn(*cell), None
    except Exception as exc:  # recorded per cell, the sweep continues
        log.error("sweep cell %r failed: %s", cell, exc)
        return [], f"{cell!r}: {type(exc).__name__}: {exc}"


def _mean_rows(rows, keys, values):
    """Group ``rows`` (dicts) by ``keys`` in first-seen order and average ``values``."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for k, rs in groups.items():
        out.append([*k, *[float(np.mean([r[v] for r in rs])) for v in values], len(rs)])
    return out


def run_sweep(cfg: ExperimentConfig, kind: str | None = None, out=None) -> Path:
    """Run a sweep and write ``<kind>.csv``, ``<kind>_mean.csv``, a plot and ``summary.txt``."""
    kind = kind or cfg.sweep.kind
    out = Path(out or cfg.output.directory)
    sw = cfg.sweep
    if kind == "nvs_theta":
        if not sw.nvs or not sw.theta_t:
            raise ConfigError("sweep.nvs and sweep.theta_t must not be empty")
        cells = [(cfg, n, t, [cfg.noise.snr], [cfg.run.seed]) for t in sw.theta_t for n in sw.nvs]
        fn, header = psf_cell, PSF_HEADER
    elif kind == "cr_snr":
        if not sw.nvs or not sw.theta_t or not sw.snr or not sw.seeds:
            raise ConfigError("sweep.nvs, sweep.theta_t, sweep.snr and sweep.seeds must not be empty")
        cells = [(cfg, n, t, list(sw.snr), list(sw.seeds)) for t in sw.theta_t for n in sw.nvs]
        fn, header = psf_cell, PSF_HEADER
    elif kind == "snr":
        if not sw.snr or not sw.seeds or not sw.methods:
            raise ConfigError("sweep.snr, sweep.seeds and sweep.methods must not be empty")
        cells = [(cfg, m, s, list(sw.snr)) for m in sw.methods for s in sw.seeds]
        fn, header = snr_cell, SNR_HEADER
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")

    results = _pool_map(fn, cells, sw.workers)
    rows = [r for rs, _ in results for r in rs]
    failures = [e for _, e in results if e]
    io.write_csv(out / f"{kind}.csv", header, rows)
    dicts = [dict(zip(header, r)) for r in rows]

    if kind == "snr":
        mean = _mean_rows(dicts, ["method", "snr_db"], ["rmse_ux", "rmse_uz", "rmse_exx", "rmse_ezz"])
        io.write_csv(out / f"{kind}_mean.csv", ["method", "snr_db", "rmse_ux", "rmse_uz", "rmse_exx", "rmse_ezz",
                                                "n_seeds"], mean)
        for col, k in (("rmse_ux", 2), ("rmse_uz", 3)):
            series = {m: ([r[1] for r in mean if r[0] == m and math.isfinite(r[1])],
                          [r[k] for r in mean if r[0] == m and math.isfinite(r[1])]) for m in sw.methods}
            series = {m: s for m, s in series.items() if s[0]}
            if series:
                line_plot(out / f"{kind}_{col}.ppm", series, "snr_db", f"{col} (m)")
    else:
        mean = _mean_rows(dicts, ["nvs", "theta_t_deg", "snr_db"], ["cr_db", "fwhm_ax_m", "fwhm_lat_m"])
        io.write_csv(out / f"{kind}_mean.csv", ["nvs", "theta_t_deg", "snr_db", "cr_db", "fwhm_ax_m", "fwhm_lat_m",
                                                "n_seeds"], mean)
        for snr in dict.fromkeys(r[2] for r in mean):
            series = {}
            for t in dict.fromkeys(r[1] for r in mean):
                sel = [r for r in mean if r[1] == t and r[2] == snr]
                series[f"theta_t={t:g}deg"] = ([r[0] for r in sel], [r[3] for r in sel])
            tag = "inf" if math.isinf(snr) else f"{snr:g}"
            line_plot(out / f"{kind}_cr_snr{tag}.ppm", series, "nvs", "cr_db")

    lines = [f"kind = {kind}", f"cells = {len(cells)}", f"rows = {len(rows)}", f"failures = {len(failures)}"]
    lines += [f"failure: {f}" for f in failures]
    io.write_text(out / "summary.txt", "\n".join(lines) + "\n")
    return out
