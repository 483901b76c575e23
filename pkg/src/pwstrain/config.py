"""Experiment configuration: TOML with explicit unit strings, normalised to SI.

Physical quantities are written as ``"<number> <unit>"`` (``"230 um"``,
``"5.3 MHz"``, ``"10 deg"``); angles are stored in radians, levels in dB.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import math
import re
from decimal import Decimal
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .beamform import DEFAULT_FOV, make_grid
from .probe import ANGLED_MEDIUM, TransducerSpec, build_sequence, current_sequence, tukey_apodization
from .strain import AXIAL_WINDOW, LATERAL_WINDOW
from .tracking import TrackingParams


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


UNITS = {
    "length": {"m": "1", "cm": "1e-2", "mm": "1e-3", "um": "1e-6", "µm": "1e-6", "nm": "1e-9"},
    "frequency": {"Hz": "1", "kHz": "1e3", "MHz": "1e6", "GHz": "1e9"},
    "time": {"s": "1", "ms": "1e-3", "us": "1e-6", "µs": "1e-6"},
    "speed": {"m/s": "1", "mm/us": "1e3", "km/s": "1e3"},
    "angle": {"rad": "1", "deg": None},
    "level": {"dB": "1"},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|inf))\s*(\S+)\s*$")


def parse_quantity(value, dimension: str) -> float:
    """``"230 um"`` -> 2.3e-4 for dimension ``"length"``.

    Decimal scaling keeps values such as 230 um the nearest double to 2.3e-4.
    """
    if not isinstance(value, str):
        raise ConfigError(f"expected a {dimension} with a unit, e.g. \"1 {next(iter(UNITS[dimension]))}\", got {value!r}")
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(f"cannot parse quantity {value!r}")
    number, unit = m.groups()
    table = UNITS[dimension]
    if unit not in table:
        raise ConfigError(f"unit {unit!r} is not a {dimension} unit (allowed: {', '.join(table)})")
    if table[unit] is None:
        return math.radians(float(number))
    if "inf" in number:
        return float(number)
    return float(Decimal(number) * Decimal(table[unit]))


def _q(dim, default):
    return field(default=default, metadata={"kind": "quantity", "dim": dim})


def _pair(dim, default):
    return field(default=default, metadata={"kind": "pair", "dim": dim})


def _qlist(dim, default):
    return field(default_factory=lambda: tuple(default), metadata={"kind": "qlist", "dim": dim})


def _choice(default, options):
    return field(default=default, metadata={"kind": "choice", "options": options})


@dataclass(frozen=True)
class ProbeConfig:
    center_frequency: float = _q("frequency", 5.3e6)
    pitch: float = _q("length", 230e-6)
    element_width: float = _q("length", 200e-6)
    element_count: int = 191
    sound_speed: float = _q("speed", 1540.0)
    sim_sampling_frequency: float = _q("frequency", 148.4e6)
    output_sampling_frequency: float = _q("frequency", 21.2e6)
    fractional_bandwidth: float = 0.6

    def spec(self) -> TransducerSpec:
        return TransducerSpec(**asdict(self))


@dataclass(frozen=True)
class SequenceConfig:
    mode: str = _choice("proposed", ("current", "proposed", "custom"))
    medium_angle: float = _q("angle", ANGLED_MEDIUM)
    medium_angles: tuple = _qlist("angle", ())
    nvs: int = 19
    theta_t: float = _q("angle", math.radians(10))
    prf: float = _q("frequency", 10e3)
    tx_cosine_fraction: float = 0.5

    def mediums(self) -> tuple:
        if self.mode == "custom":
            if not self.medium_angles:
                raise ConfigError("sequence.medium_angles is required for mode = \"custom\"")
            return tuple(self.medium_angles)
        return (-self.medium_angle, 0.0, self.medium_angle)

    def build(self):
        if self.mode == "current":
            return current_sequence(self.prf, self.medium_angle)
        return build_sequence(self.mediums(), self.nvs, self.theta_t, self.prf)

    def tx_apodization(self, element_count: int):
        return tukey_apodization(element_count, self.tx_cosine_fraction)


@dataclass(frozen=True)
class PhantomConfig:
    kind: str = _choice("vessel", ("vessel", "point"))
    center: tuple = _pair("length", (0.0, 15e-3))
    inner_diameter: float = _q("length", 6e-3)
    outer_diameter: float = _q("length", 12e-3)
    wall_density: float = 12.0
    bg_extent: tuple = _pair("length", (16e-3, 16e-3))
    bg_density: float = 12.0
    bg_level: float = _q("level", -20.0)
    point_position: tuple = _pair("length", (0.0, 15e-3))


@dataclass(frozen=True)
class MotionConfig:
    """``rigid``: ``shift`` per frame plus ``drift`` per transmit. ``radial``:
    1/R wall motion of ``step`` per transmit at the inner radius."""

    kind: str = _choice("none", ("none", "rigid", "radial"))
    shift: tuple = _pair("length", (0.0, 0.0))
    drift: tuple = _pair("length", (0.0, 0.0))
    step: float = _q("length", 0.12e-6)
    bin_width: float = _q("length", 10e-6)
    frame_interval: int = 200


@dataclass(frozen=True)
class NoiseConfig:
    snr: float = _q("level", math.inf)


@dataclass(frozen=True)
class BeamformConfig:
    origin: tuple = _pair("length", (0.0, 15e-3))
    extent: tuple = _pair("length", (13e-3, 13e-3))
    axial_step: float = _q("length", 18e-6)
    lateral_step: float = _q("length", 46e-6)
    fov: float = _q("angle", DEFAULT_FOV)

    def grids(self, mediums):
        return [make_grid(a, self.origin, self.extent, self.axial_step, self.lateral_step) for a in mediums]


@dataclass(frozen=True)
class TrackingConfig:
    coarse_kernel: tuple = _pair("length", (0.8e-3, 0.8e-3))
    coarse_search: tuple = _pair("length", (0.2e-3, 0.2e-3))
    fine_kernel: tuple = _pair("length", (0.2e-3, 0.2e-3))
    fine_search: tuple = _pair("length", (0.06e-3, 0.1e-3))
    median_window: tuple = _pair("length", (0.3e-3, 0.3e-3))
    output_grid_step: tuple = _pair("length", (0.152e-3, 0.054e-3))
    roi: tuple = _pair("length", ())
    subsample: str = _choice("coupled", ("coupled", "separable"))

    def params(self) -> TrackingParams:
        kw = asdict(self)
        kw["roi"] = tuple(self.roi) or None
        return TrackingParams(**kw)


@dataclass(frozen=True)
class StrainConfig:
    axial_window: tuple = _pair("length", AXIAL_WINDOW)
    lateral_window: tuple = _pair("length", LATERAL_WINDOW)
    image_limit: float = 0.03


@dataclass(frozen=True)
class MetricsConfig:
    psf_radius: float = 2.5
    region: str = _choice("wall", ("wall", "all"))
    wall_margin: float = _q("length", 0.0)


@dataclass(frozen=True)
class SweepConfig:
    kind: str = _choice("nvs_theta", ("nvs_theta", "snr", "cr_snr"))
    nvs: tuple = (1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29)
    theta_t: tuple = _qlist("angle", (math.radians(5), math.radians(10), math.radians(15)))
    snr: tuple = _qlist("level", (math.inf,))
    seeds: tuple = (0,)
    methods: tuple = ("current", "proposed")
    medium: str = _choice("plus", ("minus", "zero", "plus"))
    workers: int = 1


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/default"
    images: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    beamform: BeamformConfig = field(default_factory=BeamformConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    strain: StrainConfig = field(default_factory=StrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        """Plain SI dictionary (angles in radians); infinities as strings for JSON."""
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v
        return clean(asdict(self))

    def section(self, *names) -> dict:
        d = self.to_dict()
        return {n: d[n] for n in names}


def _convert(section: str, f, value):
    meta = f.metadata
    kind = meta.get("kind")
    where = f"{section}.{f.name}"
    try:
        if kind == "quantity":
            return parse_quantity(value, meta["dim"])
        if kind == "pair":
            if not isinstance(value, list) or len(value) != 2:
                raise ConfigError("expected a list of two quantities")
            return tuple(parse_quantity(v, meta["dim"]) for v in value)
        if kind == "qlist":
            if not isinstance(value, list):
                raise ConfigError("expected a list of quantities")
            return tuple(parse_quantity(v, meta["dim"]) for v in value)
        if kind == "choice":
            if value not in meta["options"]:
                raise ConfigError(f"must be one of {', '.join(meta['options'])}")
            return value
        default = f.default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError("expected true or false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("expected an integer")
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError("expected a number")
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError("expected a string")
            return value
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError("expected a list")
            return tuple(value)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unsupported value")


def from_dict(data: dict) -> ExperimentConfig:
    sections = {}
    top = {f.name: f for f in fields(ExperimentConfig)}
    for name, body in data.items():
        if name not in top:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table")
        cls = top[name].default_factory
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            kwargs[key] = _convert(name, known[key], value)
        try:
            sections[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    cfg = ExperimentConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    """Cross-field checks that construct every derived object once."""
    try:
        spec = cfg.probe.spec()
        seq = cfg.sequence.build()
        cfg.sequence.tx_apodization(spec.element_count)
        cfg.beamform.grids(cfg.sequence.mediums())
        cfg.tracking.params()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    del seq
    if cfg.motion.frame_interval < 1:
        raise ConfigError("motion.frame_interval must be >= 1")
    if cfg.motion.bin_width < 0:
        raise ConfigError("motion.bin_width must be >= 0")
    if cfg.metrics.psf_radius <= 0:
        raise ConfigError("metrics.psf_radius must be positive")
    if cfg.sweep.workers < 1:
        raise ConfigError("sweep.workers must be >= 1")
    if cfg.run.seed < 0:
        raise ConfigError("run.seed must be non-negative")
    for m in cfg.sweep.methods:
        if m not in ("current", "proposed"):
            raise ConfigError(f"sweep.methods: unknown method {m!r}")
    for n in cfg.sweep.nvs:
        if not isinstance(n, int) or n < 1:
            raise ConfigError("sweep.nvs entries must be positive integers")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data)
