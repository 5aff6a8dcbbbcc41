"""INI-style experiment configuration with validation and exact round-tripping.

Every key has a documented default taken from the apparatus (pump, fiber,
filters) or marked as a calibration knob (source brightness, detector), so an
empty document is a complete configuration.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from .sampler import Calibration, DetectorSpec
from .spectral import FiberSpec, FilterSpec, PumpSpec

SCENARIOS = ("power_sweep", "accidental_sweep", "g2_vs_bandwidth", "hom_scan", "single_g2")


class ConfigError(ValueError):
    def __init__(self, issues: list[str]):
        self.issues = issues
        super().__init__("invalid configuration:\n  " + "\n  ".join(issues))


@dataclass(frozen=True)
class FilterBlock:
    signal_center_nm: float = 1546.9
    idler_center_nm: float = 1530.9
    fwhm_nm: float = 0.33
    shape: str = "gaussian"
    order: int = 1

    def specs(self, fwhm_nm: float | None = None) -> tuple[FilterSpec, FilterSpec]:
        w = self.fwhm_nm if fwhm_nm is None else fwhm_nm
        return (
            FilterSpec(self.signal_center_nm, w, self.shape, self.order),
            FilterSpec(self.idler_center_nm, w, self.shape, self.order),
        )


@dataclass(frozen=True)
class GridBlock:
    n_points: int = 512
    span_factor: float = 6.0
    envelope: str = "pump"


@dataclass(frozen=True)
class SourceBlock:
    linear_coeff: float = 0.002
    quad_coeff: float = 0.1
    raman_modes: int = 10
    average_power_mw: float = 5.5

    @property
    def calibration(self) -> Calibration:
        return Calibration(self.linear_coeff, self.quad_coeff)


def _default_powers() -> tuple[float, ...]:
    return tuple(round(0.05 * k, 10) for k in range(1, 11))


@dataclass(frozen=True)
class PowerSweepBlock:
    powers_mw: tuple[float, ...] = field(default_factory=_default_powers)
    gates: int = 400_000_000


@dataclass(frozen=True)
class BandwidthSweepBlock:
    ratios: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    average_power_mw: float = 3.2
    gates: int = 10_000_000


@dataclass(frozen=True)
class HomBlock:
    average_power_mw: float = 3.2
    target_g2: float | None = None
    scan_points: int = 25
    reach: float = 4.0
    stage_unit: str = "delay_ps"
    counts_per_point: float = 10_000.0
    basis_overlap: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "single_g2"
    master_seed: int = 20080415
    gates: int = 10_000_000
    output_dir: str = "pairsim-out"
    pump: PumpSpec = PumpSpec()
    fiber: FiberSpec = FiberSpec()
    filter: FilterBlock = FilterBlock()
    grid: GridBlock = GridBlock()
    source: SourceBlock = SourceBlock()
    detector: DetectorSpec = DetectorSpec()
    power_sweep: PowerSweepBlock = PowerSweepBlock()
    bandwidth_sweep: BandwidthSweepBlock = BandwidthSweepBlock()
    hom: HomBlock = HomBlock()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# schema: section -> key -> (attribute path, parser, validator)
# ---------------------------------------------------------------------------


def _float(s: str) -> float:
    return float(s)


def _int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        v = float(s)  # accepts "1e7"
        if not v.is_integer():
            raise ValueError(f"{s!r} is not an integer") from None
        return int(v)


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none") else float(s)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.replace(",", " ").split())


def _str(s: str) -> str:
    return s.strip()


def _between(lo, hi):
    def check(v):
        return None if lo <= v <= hi else f"must lie in [{lo}, {hi}]"

    return check


def _positive(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be non-negative"


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"

    return check


def _all(check):
    def run(values):
        if not values:
            return "must not be empty"
        for v in values:
            msg = check(v)
            if msg:
                return msg
        return None

    return run


def _opt(check):
    return lambda v: None if v is None else check(v)


_WAVELENGTH = _between(1400.0, 1700.0)
_AVG_POWER = _between(0.0, 100.0)

SCHEMA: dict[str, dict[str, tuple[str, Callable[[str], Any], Callable[[Any], str | None] | None]]] = {
    "run": {
        "scenario": ("scenario", _str, _choice(*SCENARIOS)),
        "seed": ("master_seed", _int, _between(0, 2**64 - 1)),
        "gates": ("gates", _int, _between(1, 10**11)),
        "output_dir": ("output_dir", _str, None),
    },
    "pump": {
        "center_wavelength_nm": ("pump.center_wavelength", _float, _WAVELENGTH),
        "fwhm_nm": ("pump.fwhm_wavelength", _float, _positive),
        "peak_power_w": ("pump.peak_power", _opt_float, _opt(_nonneg)),
        "average_power_mw": ("pump.average_power", _opt_float, _opt(_AVG_POWER)),
        "repetition_rate_mhz": ("pump.repetition_rate", _float, _positive),
    },
    "fiber": {
        "length_km": ("fiber.length", _float, _positive),
        "zero_dispersion_nm": ("fiber.zero_dispersion_wavelength", _float, _between(1536.0, 1540.0)),
        "dispersion_slope": ("fiber.dispersion_slope", _float, None),
        "gamma": ("fiber.nonlinear_coefficient", _float, _nonneg),
    },
    "filter": {
        "signal_center_nm": ("filter.signal_center_nm", _float, _WAVELENGTH),
        "idler_center_nm": ("filter.idler_center_nm", _float, _WAVELENGTH),
        "fwhm_nm": ("filter.fwhm_nm", _float, _positive),
        "shape": ("filter.shape", _str, _choice("gaussian", "supergaussian")),
        "order": ("filter.order", _int, _between(1, 20)),
    },
    "grid": {
        "n_points": ("grid.n_points", _int, lambda n: None if n >= 16 and n & (n - 1) == 0 else "must be a power of two >= 16"),
        "span_factor": ("grid.span_factor", _float, _between(4.0, 100.0)),
        "envelope": ("grid.envelope", _str, _choice("pump", "autoconvolution")),
    },
    "source": {
        "linear_coeff": ("source.linear_coeff", _float, _nonneg),
        "quad_coeff": ("source.quad_coeff", _float, _nonneg),
        "raman_modes": ("source.raman_modes", _int, _between(1, 10_000)),
        "average_power_mw": ("source.average_power_mw", _float, _AVG_POWER),
    },
    "detector": {
        "efficiency": ("detector.efficiency", _float, _between(0.0, 1.0)),
        "dark_count_prob": ("detector.dark_count_prob", _float, _between(0.0, 0.5)),
        "gate_width_ns": ("detector.gate_width", _float, _positive),
        "gate_rate_khz": ("detector.gate_rate", _float, _positive),
        "dead_time_us": ("detector.dead_time", _float, _nonneg),
        "channel_loss_db": ("detector.channel_loss", _float, _nonneg),
    },
    "power_sweep": {
        "powers_mw": ("power_sweep.powers_mw", _floats, _all(lambda p: None if 0 < p <= 100 else "must lie in (0, 100]")),
        "gates": ("power_sweep.gates", _int, _between(1, 10**11)),
    },
    "bandwidth_sweep": {
        "ratios": ("bandwidth_sweep.ratios", _floats, _all(_positive)),
        "average_power_mw": ("bandwidth_sweep.average_power_mw", _float, _AVG_POWER),
        "gates": ("bandwidth_sweep.gates", _int, _between(1, 10**11)),
    },
    "hom": {
        "average_power_mw": ("hom.average_power_mw", _float, _AVG_POWER),
        "target_g2": ("hom.target_g2", _opt_float, _opt(lambda g: None if 1.0 < g <= 2.0 else "must lie in (1, 2]")),
        "scan_points": ("hom.scan_points", _int, _between(7, 1001)),
        "reach": ("hom.reach", _float, _between(3.0, 100.0)),
        "stage_unit": ("hom.stage_unit", _str, _choice("delay_ps", "position_mm")),
        "counts_per_point": ("hom.counts_per_point", _float, _positive),
        "basis_overlap": ("hom.basis_overlap", _float, _between(0.0, 1.0)),
    },
}


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    where: dict[tuple[str, str | None], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip().lower()
            where.setdefault((section, None), no)
            continue
        m = re.match(r"([^=:]+)[=:]", stripped)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


def _get(cfg, path: str):
    obj = cfg
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _set(values: dict, path: str, value):
    head, _, rest = path.partition(".")
    if rest:
        values.setdefault(head, {})[rest] = value
    else:
        values[head] = value


def parse_config(text: str, require: tuple[str, ...] = ()) -> ExperimentConfig:
    """Parse and validate; raise ConfigError listing every problem with its line.

    ``require`` names blocks (``"hom"``) or ``"block.key"`` entries that must be present.
    """
    where = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc

    issues: list[str] = []
    values: dict[str, Any] = {}

    def at(section, key=None):
        no = where.get((section, key))
        return f"line {no}: " if no else ""

    for req in require:
        sec, _, key = req.partition(".")
        if not parser.has_section(sec):
            issues.append(f"missing required block [{sec}]")
        elif key and not parser.has_option(sec, key):
            issues.append(f"{at(sec)}[{sec}] is missing required key {key!r}")

    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            issues.append(f"{at(sec)}unknown block [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in SCHEMA[sec]:
                issues.append(f"{at(sec, key)}unknown key {key!r} in [{sec}]")
                continue
            path, conv, check = SCHEMA[sec][key]
            try:
                value = conv(raw)
            except (TypeError, ValueError):
                issues.append(f"{at(sec, key)}{sec}.{key}: cannot parse {raw!r}")
                continue
            msg = check(value) if check else None
            if msg:
                issues.append(f"{at(sec, key)}{sec}.{key} = {raw!r} out of range: {msg}")
                continue
            _set(values, path, value)

    if issues:
        raise ConfigError(issues)

    defaults = ExperimentConfig()
    kwargs = {}
    for name, val in values.items():
        if isinstance(val, dict):
            try:
                kwargs[name] = dataclasses.replace(getattr(defaults, name), **val)
            except (TypeError, ValueError) as exc:
                issues.append(f"{at(name)}[{name}]: {exc}")
        else:
            kwargs[name] = val
    if issues:
        raise ConfigError(issues)
    return dataclasses.replace(defaults, **kwargs)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def print_config(cfg: ExperimentConfig) -> str:
    """Full INI rendering; ``parse_config(print_config(c)) == c``."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (path, _, _) in keys.items():
            out.append(f"{key} = {_format(_get(cfg, path))}")
        out.append("")
    return "\n".join(out)
