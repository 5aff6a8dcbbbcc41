"""Scenario orchestration: the four bench measurements plus the headline g2 run."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .config import ExperimentConfig, print_config
from .counting import (
    coincidences,
    expected_g2_estimate,
    fit_polynomial,
    measure_g2,
    photon_coincidence_rate,
    photons_per_pulse,
    singles_rate,
)
from .hom import HOMConfig, StageUnit, default_delays, delay_to_stage, extract_visibility, gates_for_counts, scan_hom
from .modes import SchmidtSpectrum, effective_mode_number, predict_g2, predict_hom_visibility, schmidt_decompose
from .rng import SeedTree, worker_count
from .sampler import Routing, SourceState, derive_source_state, run_gated_stream
from .spectral import FrequencyGrid, JSAMatrix, build_jsa

Table = tuple[Sequence[str], list[Sequence]]


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def emit_csv(table: Table, path) -> Path:
    """Write ``(header, rows)`` as CSV: '.' decimals, 12 significant digits, '\\n' line ends."""
    header, rows = table
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                if len(row) != len(header):
                    raise ValueError(f"row {row!r} does not match header of {len(header)} columns")
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_report(lines: dict[str, object], path) -> Path:
    path = Path(path)
    text = "".join(f"{k}: {_cell(v)}\n" for k, v in lines.items())
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# physics chain
# ---------------------------------------------------------------------------


def jsa_for(cfg: ExperimentConfig, signal_fwhm_nm: float | None = None) -> JSAMatrix:
    filter_s, filter_i = cfg.filter.specs(signal_fwhm_nm)
    grid = FrequencyGrid.for_setup(cfg.pump, filter_s, filter_i, cfg.grid.n_points, cfg.grid.span_factor)
    return build_jsa(cfg.pump, cfg.fiber, filter_s, filter_i, grid, cfg.grid.envelope)


def schmidt_for(cfg: ExperimentConfig, signal_fwhm_nm: float | None = None) -> SchmidtSpectrum:
    return schmidt_decompose(jsa_for(cfg, signal_fwhm_nm))


def filter_for_g2(cfg: ExperimentConfig, target_g2: float) -> float:
    """Signal/idler filter FWHM (nm) whose predicted g2 equals ``target_g2``."""

    def gap(w):
        return predict_g2(effective_mode_number(schmidt_for(cfg, w))) - target_g2

    lo, hi = 0.05 * cfg.pump.fwhm_wavelength, 20.0 * cfg.pump.fwhm_wavelength
    if gap(lo) * gap(hi) > 0:
        raise ValueError(f"g2 = {target_g2} not reachable with filters in [{lo:.3g}, {hi:.3g}] nm")
    return float(brentq(gap, lo, hi, xtol=1e-6))


def source_at(cfg: ExperimentConfig, schmidt: SchmidtSpectrum, average_power_mw: float) -> SourceState:
    pump = dataclasses.replace(cfg.pump, peak_power=None, average_power=average_power_mw)
    return derive_source_state(pump, schmidt, cfg.source.calibration, cfg.source.raman_modes)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def _power_point(cfg, schmidt, power, seeds, workers):
    det = cfg.detector
    state = source_at(cfg, schmidt, power)
    a, b = run_gated_stream(state, det, det, cfg.power_sweep.gates, seeds, Routing.PAIRS, workers=workers)
    p_a, p_a_err = singles_rate(a)
    p_b, _ = singles_rate(b)
    c0, g0 = coincidences(a, b, 0)
    c1, g1 = coincidences(a, b, 1)
    n_s = photons_per_pulse(p_a, det)
    slope = det.total_efficiency * (1.0 - det.dark_count_prob) * max(1.0 - p_a, 1e-12)
    r_ac = photon_coincidence_rate(c1 / g1, p_a, p_b, det, det)
    r_ac_err = math.sqrt(max(c1, 1)) / g1 / det.total_efficiency**2
    return [power, n_s, p_a_err / slope, r_ac, r_ac_err, c0 / g0, c1]


def power_table(cfg: ExperimentConfig, seeds: SeedTree, workers=None) -> Table:
    schmidt = schmidt_for(cfg)
    powers = sorted(cfg.power_sweep.powers_mw)
    rows = [
        _power_point(cfg, schmidt, p, seeds.child("power_point", i), workers)
        for i, p in enumerate(powers)
    ]
    header = ["P_ave_mW", "N_s", "N_s_err", "R_ac", "R_ac_err", "true_coinc_rate", "accidental_counts"]
    return header, rows


def _fit_table(fit) -> Table:
    return ["power", "coefficient", "stderr"], [
        [k, c, e] for k, c, e in zip(fit.powers, fit.coefficients, fit.stderr)
    ]


def run_power_sweep(cfg, out: Path, seeds: SeedTree, workers=None, accidental=False) -> dict:
    table = power_table(cfg, seeds.child("power_sweep"), workers)
    rows = np.array(table[1], dtype=float)
    p = rows[:, 0]
    if accidental:
        fit = fit_polynomial(p, rows[:, 3], (2, 3, 4), nonneg=True, sigma=rows[:, 4])
        name = "accidental_sweep"
    else:
        fit = fit_polynomial(p, rows[:, 1], (1, 2), nonneg=True, sigma=rows[:, 2])
        name = "power_sweep"
    emit_csv(table, out / f"{name}.csv")
    emit_csv(_fit_table(fit), out / f"{name}_fit.csv")
    top = float(p.max())
    report = {"scenario": name, "points": len(p), "gates_per_point": cfg.power_sweep.gates}
    for k, c, e in zip(fit.powers, fit.coefficients, fit.stderr):
        report[f"coeff_p{k}"] = float(c)
        report[f"coeff_p{k}_stderr"] = float(e)
    for k in fit.powers:
        report[f"fraction_p{k}_at_{_cell(top)}mW"] = fit.contribution(k, top)
    report["r_squared"] = fit.r_squared
    emit_report(report, out / f"{name}_report.txt")
    return {"fit": fit, "table": table, "report": report}


def run_single_g2(cfg, out: Path, seeds: SeedTree, workers=None) -> dict:
    schmidt = schmidt_for(cfg)
    K = effective_mode_number(schmidt)
    state = source_at(cfg, schmidt, cfg.source.average_power_mw)
    res = measure_g2(state, cfg.detector, cfg.detector, cfg.gates, seeds.child("single_g2"), workers=workers)
    header = [
        "delta_lambda_s_nm", "delta_lambda_p_nm", "K", "g2_predicted", "g2_expected",
        "g2_measured", "g2_error", "true_coinc", "accidental_coinc", "gates_used",
    ]
    expected = expected_g2_estimate(state, cfg.detector, cfg.detector)
    row = [
        cfg.filter.fwhm_nm, cfg.pump.fwhm_wavelength, K, predict_g2(K), expected,
        res.g2, res.g2_error, res.true_coinc, res.accidental_coinc, res.gates_used,
    ]
    emit_csv((header, [row]), out / "single_g2.csv")
    report = dict(zip(header, row))
    report = {"scenario": "single_g2", "gates": cfg.gates, "pair_mean": state.pair_mean, **report}
    emit_report(report, out / "single_g2_report.txt")
    return {"result": res, "K": K, "state": state, "report": report}


def run_g2_vs_bandwidth(cfg, out: Path, seeds: SeedTree, workers=None) -> dict:
    sweep = cfg.bandwidth_sweep
    dlp = cfg.pump.fwhm_wavelength
    rows = []
    for i, ratio in enumerate(sorted(sweep.ratios)):
        dls = ratio * dlp
        schmidt = schmidt_for(cfg, dls)
        K = effective_mode_number(schmidt)
        state = source_at(cfg, schmidt, sweep.average_power_mw)
        g2p = predict_g2(K)
        res = measure_g2(
            state, cfg.detector, cfg.detector, sweep.gates, seeds.child("g2_vs_bandwidth", i), workers=workers
        )
        expected = expected_g2_estimate(state, cfg.detector, cfg.detector)
        rows.append([dls, dlp, ratio, K, g2p, predict_hom_visibility(K), expected, res.g2, res.g2_error])
    header = [
        "delta_lambda_s_nm", "delta_lambda_p_nm", "ratio", "K", "g2_predicted", "V_predicted",
        "g2_expected", "g2_measured", "g2_error",
    ]
    emit_csv((header, rows), out / "g2_vs_bandwidth.csv")
    return {"table": (header, rows)}


def hom_setup(cfg: ExperimentConfig) -> tuple[HOMConfig, float, float]:
    """HOM bench for the configured (or g2-targeted) filter; returns (bench, K, filter FWHM)."""
    hom = cfg.hom
    fwhm = cfg.filter.fwhm_nm if hom.target_g2 is None else filter_for_g2(cfg, hom.target_g2)
    jsa = jsa_for(cfg, fwhm)
    schmidt = schmidt_decompose(jsa)
    K = effective_mode_number(schmidt)
    state = source_at(cfg, schmidt, hom.average_power_mw)
    spectrum = jsa.signal_marginal()
    delays = default_delays(spectrum, hom.scan_points, hom.reach)
    unit = StageUnit(hom.stage_unit)
    scan = delay_to_stage(delays) if unit is StageUnit.POSITION_MM else delays
    probe = HOMConfig(state, state, spectrum, scan, cfg.detector, cfg.detector, unit, 10**4, hom.basis_overlap)
    gates = gates_for_counts(probe, hom.counts_per_point)
    return dataclasses.replace(probe, gates_per_point=gates), K, fwhm


def run_hom_scan(cfg, out: Path, seeds: SeedTree, workers=None) -> dict:
    bench, K, fwhm = hom_setup(cfg)
    curve = scan_hom(bench, seeds.child("hom_scan"), workers)
    fit = extract_visibility(curve)
    rows = [
        [d, c, e * g, f * g]
        for d, c, e, f, g in zip(curve.delays, curve.coincidences, curve.errors, fit.fitted, curve.gates)
    ]
    emit_csv((["delay_ps", "coincidences", "error", "fit_value"], rows), out / "hom_scan.csv")
    report = {
        "scenario": "hom_scan",
        "delta_lambda_s_nm": fwhm,
        "K": K,
        "g2_predicted": predict_g2(K),
        "V_predicted": predict_hom_visibility(K),
        "V_raw": fit.visibility,
        "V_raw_error": fit.error,
        "V_background_subtracted": fit.corrected_visibility,
        "V_background_subtracted_error": fit.corrected_error,
        "delay_offset_ps": fit.delay_offset,
        "baseline_rate": fit.baseline,
        "coherence_time_ps": curve.coherence_time,
        "gates_per_point": bench.gates_per_point,
    }
    emit_report(report, out / "hom_report.txt")
    return {"fit": fit, "curve": curve, "K": K, "report": report}


RUNNERS = {
    "power_sweep": lambda cfg, out, seeds, w: run_power_sweep(cfg, out, seeds, w),
    "accidental_sweep": lambda cfg, out, seeds, w: run_power_sweep(cfg, out, seeds, w, accidental=True),
    "g2_vs_bandwidth": run_g2_vs_bandwidth,
    "hom_scan": run_hom_scan,
    "single_g2": run_single_g2,
}


@dataclass(frozen=True)
class RunManifest:
    scenario: str
    seed: int
    config: str
    versions: dict
    duration_s: float
    outputs: dict

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _versions() -> dict:
    import numba
    import scipy

    return {
        "pairsim": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


def run_scenario(cfg: ExperimentConfig, workers: int | None = None) -> tuple[RunManifest, dict]:
    """Run ``cfg.scenario`` into ``cfg.output_dir``; returns the manifest and scenario results."""
    if cfg.scenario not in RUNNERS:
        raise ValueError(f"unknown scenario {cfg.scenario!r}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = SeedTree(cfg.master_seed)
    t0 = time.perf_counter()
    try:
        result = RUNNERS[cfg.scenario](cfg, out, seeds, worker_count(workers))
    except Exception as exc:
        raise RuntimeError(f"scenario {cfg.scenario} failed: {exc}") from exc
    duration = time.perf_counter() - t0
    digests = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = RunManifest(cfg.scenario, cfg.master_seed, print_config(cfg), _versions(), round(duration, 3), digests)
    manifest.write(out / "manifest.json")
    return manifest, result
