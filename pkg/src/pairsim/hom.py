"""Two-source Hong-Ou-Mandel bench: delay scan, coincidences, visibility fit.

Interference is evaluated at the probability level. For chaotic (Gaussian,
phase-insensitive) fields a bucket detector with efficiency eta sees no click
with probability 1/det(I + eta * Gamma), Gamma being the first-order
correlation matrix of the modes it collects. Applying this jointly to both
splitter outputs gives the exact single and coincidence click probabilities,
which reduce to the fourth-order-moment dip formula at low occupation.
"""

from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .counting import coincidences
from .rng import SeedTree, worker_count
from .sampler import (
    BLOCK_GATES,
    Channel,
    ClickStream,
    DetectorSpec,
    SourceState,
    bernoulli_positions,
)
from .spectral import C_NM_PER_PS, SpectralAmplitude

C_MM_PER_PS = C_NM_PER_PS * 1e-6


class NoDipError(RuntimeError):
    pass


class StageUnit(str, enum.Enum):
    DELAY_PS = "delay_ps"
    POSITION_MM = "position_mm"


def stage_to_delay(position_mm):
    """Double-pass stage: moving the stage by x changes the path by 2x."""
    return 2.0 * np.asarray(position_mm, dtype=float) / C_MM_PER_PS


def delay_to_stage(delay_ps):
    return np.asarray(delay_ps, dtype=float) * C_MM_PER_PS / 2.0


def _normalized_intensity(spectrum: SpectralAmplitude) -> tuple[np.ndarray, np.ndarray, float]:
    dw = spectrum.spacing
    s = spectrum.intensity
    s = s / (np.sum(s) * dw)
    center = np.sum(spectrum.omega * s) * dw
    return spectrum.omega - center, s, dw


def mode_overlap(spectrum: SpectralAmplitude, delay):
    """|first-order coherence|^2 of the field with intensity spectrum ``spectrum`` at ``delay`` (ps)."""
    offsets, s, dw = _normalized_intensity(spectrum)
    tau = np.asarray(delay, dtype=float)
    g1 = np.exp(1j * np.multiply.outer(tau, offsets)) @ s * dw
    out = np.abs(g1) ** 2
    return float(out) if out.ndim == 0 else out


def coherence_time(spectrum: SpectralAmplitude) -> float:
    """Integral of the overlap over delay, 2 pi * int S^2 d omega by Parseval."""
    _, s, dw = _normalized_intensity(spectrum)
    return float(2.0 * math.pi * np.sum(s**2) * dw)


@dataclass(frozen=True)
class ClickProbabilities:
    single_c: float
    single_d: float
    coincidence: float

    @property
    def any_click(self) -> float:
        return self.single_c + self.single_d - self.coincidence


def _no_click_fwm(lam, mean_1, mean_2, overlap, eta_c, eta_d):
    """No-click probabilities (c, d, joint) from the matched FWM modes."""
    o = math.sqrt(min(max(overlap, 0.0), 1.0))
    a = np.array([1.0, 0.0])
    b = np.array([o, math.sqrt(1.0 - o * o)])
    pa = np.outer(a, a)
    pb = np.outer(b, b)
    x = mean_1 * lam[:, None, None]
    y = mean_2 * lam[:, None, None]
    rho_a = x * pa
    rho_b = y * pb
    same = (rho_a + rho_b) / 2
    cross = (rho_a - rho_b) / 2
    eye2 = np.eye(2)
    q_c = np.prod(1.0 / np.linalg.det(eye2 + eta_c * same))
    q_d = np.prod(1.0 / np.linalg.det(eye2 + eta_d * same))
    gamma = np.block([[same, cross], [cross, same]])
    root = np.sqrt(np.array([eta_c, eta_c, eta_d, eta_d]))
    joint = np.eye(4) + root[:, None] * gamma * root[None, :]
    q_cd = np.prod(1.0 / np.linalg.det(joint))
    return float(q_c), float(q_d), float(q_cd)


def click_probabilities(
    source_1: SourceState,
    source_2: SourceState,
    overlap: float,
    det_c: DetectorSpec,
    det_d: DetectorSpec,
    background: bool = True,
) -> ClickProbabilities:
    """Exact single and coincidence click probabilities at the two splitter outputs.

    ``overlap`` is the squared mode overlap between the two sources' signal
    fields (1 at zero delay for identical spectra). Raman photons from each
    source are treated as thermal modes orthogonal to everything else and
    split evenly. ``background=False`` drops Raman and dark counts.
    """
    eta_c, eta_d = det_c.total_efficiency, det_d.total_efficiency
    lam = source_1.schmidt.significant
    if source_2.schmidt.significant.size != lam.size or not np.allclose(source_2.schmidt.significant, lam):
        raise ValueError("both sources must share one Schmidt spectrum")
    q_c, q_d, q_cd = _no_click_fwm(lam, source_1.pair_mean, source_2.pair_mean, overlap, eta_c, eta_d)
    if background:
        for src in (source_1, source_2):
            r = src.raman_mode_count
            m = src.raman_mean_s / r
            q_c *= (1.0 + eta_c * m / 2) ** -r
            q_d *= (1.0 + eta_d * m / 2) ** -r
            q_cd *= (1.0 + (eta_c + eta_d) * m / 2) ** -r
        dc, dd = det_c.dark_count_prob, det_d.dark_count_prob
        q_c *= 1.0 - dc
        q_d *= 1.0 - dd
        q_cd *= (1.0 - dc) * (1.0 - dd)
    p_c, p_d = 1.0 - q_c, 1.0 - q_d
    return ClickProbabilities(p_c, p_d, 1.0 - q_c - q_d + q_cd)


@dataclass(frozen=True)
class HOMConfig:
    source_1: SourceState
    source_2: SourceState
    spectrum: SpectralAmplitude = field(repr=False)
    delay_scan: np.ndarray = field(repr=False)
    detector_c: DetectorSpec = DetectorSpec()
    detector_d: DetectorSpec = DetectorSpec()
    stage_unit: StageUnit = StageUnit.DELAY_PS
    gates_per_point: int = 10**6
    basis_overlap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "stage_unit", StageUnit(self.stage_unit))
        object.__setattr__(self, "delay_scan", np.asarray(self.delay_scan, dtype=float))
        if self.gates_per_point < 10**4:
            raise ValueError(f"gates_per_point must be >= 1e4, got {self.gates_per_point}")
        if not 0.0 <= self.basis_overlap <= 1.0:
            raise ValueError("basis_overlap must lie in [0, 1]")
        tc = coherence_time(self.spectrum)
        d = self.delays_ps
        if d.min() > -3 * tc or d.max() < 3 * tc:
            raise ValueError(
                f"delay scan [{d.min():.3g}, {d.max():.3g}] ps must reach 3 coherence times ({3 * tc:.3g} ps) each side"
            )
        m1, m2 = self.source_1.pair_mean, self.source_2.pair_mean
        if min(m1, m2) > 0 and max(m1, m2) > 10 * min(m1, m2):
            warnings.warn(f"source intensities differ by more than 10x ({m1:.3g} vs {m2:.3g})", stacklevel=2)

    @property
    def delays_ps(self) -> np.ndarray:
        if self.stage_unit is StageUnit.POSITION_MM:
            return stage_to_delay(self.delay_scan)
        return self.delay_scan

    @property
    def coherence_time(self) -> float:
        return coherence_time(self.spectrum)

    def probabilities(self, delay_ps: float, background: bool = True) -> ClickProbabilities:
        ov = self.basis_overlap * mode_overlap(self.spectrum, delay_ps)
        return click_probabilities(self.source_1, self.source_2, ov, self.detector_c, self.detector_d, background)


def default_delays(spectrum: SpectralAmplitude, n_points: int = 25, reach: float = 4.0) -> np.ndarray:
    tc = coherence_time(spectrum)
    return np.linspace(-reach * tc, reach * tc, n_points)


def gates_for_counts(cfg: HOMConfig, counts: float) -> int:
    """Gates per point giving ``counts`` expected baseline coincidences."""
    far = cfg.probabilities(10 * cfg.coherence_time)
    return max(10**4, math.ceil(counts / far.coincidence))


def simulate_hom_point(cfg: HOMConfig, delay_ps: float, seeds: SeedTree) -> tuple[int, int]:
    """Sample ``gates_per_point`` gates at one delay; return (coincidences, gates used)."""
    probs = cfg.probabilities(delay_ps)
    p_any = probs.any_click
    n = cfg.gates_per_point
    raw_c, raw_d = [], []
    for idx, start in enumerate(range(0, n, BLOCK_GATES)):
        size = min(BLOCK_GATES, n - start)
        rng = seeds.generator("block", idx)
        pos = bernoulli_positions(rng, size, p_any) + start
        u = rng.random(pos.size) * p_any
        both = u < probs.coincidence
        c_only = (u >= probs.coincidence) & (u < probs.single_c)
        d_only = u >= probs.single_c
        raw_c.append(pos[both | c_only])
        raw_d.append(pos[both | d_only])
    c = ClickStream.from_raw(Channel.C, n, np.concatenate(raw_c), cfg.detector_c.dead_gates)
    d = ClickStream.from_raw(Channel.D, n, np.concatenate(raw_d), cfg.detector_d.dead_gates)
    return coincidences(c, d, 0)


@dataclass(frozen=True)
class DipCurve:
    delays: np.ndarray
    coincidences: np.ndarray
    gates: np.ndarray
    spectrum: SpectralAmplitude = field(repr=False)
    background_rate: float = 0.0

    @property
    def rates(self) -> np.ndarray:
        return self.coincidences / self.gates

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.coincidences, 1)) / self.gates

    @property
    def coherence_time(self) -> float:
        return coherence_time(self.spectrum)

    @property
    def baseline(self) -> float:
        wing = np.abs(self.delays) > 3 * self.coherence_time
        if not wing.any():
            raise ValueError("no scan points beyond three coherence times")
        return float(np.mean(self.rates[wing]))

    @property
    def minimum(self) -> float:
        return float(np.min(self.rates))


@dataclass(frozen=True)
class VisibilityFit:
    visibility: float
    error: float
    delay_offset: float
    baseline: float
    minimum: float
    corrected_visibility: float
    corrected_error: float
    fitted: np.ndarray = field(repr=False)

    def __iter__(self):
        yield self.visibility
        yield self.error


def extract_visibility(curve: DipCurve) -> VisibilityFit:
    """Fit baseline * (1 - V * overlap(delay - delay0)) with free (baseline, V, delay0)."""
    if curve.delays.size < 7:
        raise ValueError(f"need at least 7 scan points, got {curve.delays.size}")
    tc = curve.coherence_time
    if not (curve.delays < -3 * tc).any() or not (curve.delays > 3 * tc).any():
        raise ValueError("scan must include both wings beyond three coherence times")

    def model(tau, base, vis, tau0):
        return base * (1.0 - vis * mode_overlap(curve.spectrum, tau - tau0))

    rates, sig = curve.rates, curve.errors
    base0 = curve.baseline
    vis0 = max(0.0, min(1.0, 1.0 - curve.minimum / base0)) if base0 > 0 else 0.0
    tau0 = float(curve.delays[np.argmin(rates)]) if vis0 > 0 else 0.0
    popt, pcov = curve_fit(
        model,
        curve.delays,
        rates,
        p0=[base0, vis0, tau0],
        sigma=sig,
        absolute_sigma=True,
        bounds=([0.0, -1.0, curve.delays.min()], [np.inf, 1.0, curve.delays.max()]),
    )
    base, vis, t0 = popt
    perr = np.sqrt(np.diag(pcov))
    vis_err = float(perr[1])
    if not vis > 2 * vis_err:
        raise NoDipError(f"fitted visibility {vis:.4g} +/- {vis_err:.2g} is below 2 sigma")
    scale = base / (base - curve.background_rate) if base > curve.background_rate else float("nan")
    return VisibilityFit(
        float(vis),
        vis_err,
        float(t0),
        float(base),
        float(base * (1.0 - vis)),
        float(vis * scale),
        float(vis_err * scale),
        model(curve.delays, *popt),
    )


def scan_hom(cfg: HOMConfig, seeds: SeedTree, workers: int | None = None) -> DipCurve:
    """Evaluate every delay with its own derived stream and assemble the dip curve."""
    delays = cfg.delays_ps

    def one(i):
        return simulate_hom_point(cfg, float(delays[i]), seeds.child("point", i))

    nw = min(worker_count(workers), delays.size)
    if nw > 1:
        with ThreadPoolExecutor(nw) as pool:
            results = list(pool.map(one, range(delays.size)))
    else:
        results = [one(i) for i in range(delays.size)]
    far = 10 * cfg.coherence_time
    bg = cfg.probabilities(far).coincidence - cfg.probabilities(far, background=False).coincidence
    return DipCurve(
        delays,
        np.array([r[0] for r in results], dtype=float),
        np.array([r[1] for r in results], dtype=float),
        cfg.spectrum,
        bg,
    )
