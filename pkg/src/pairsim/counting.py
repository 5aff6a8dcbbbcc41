"""Singles, coincidences, g2 and polynomial power-law fits from click streams."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .rng import SeedTree
from .sampler import ClickStream, DetectorSpec, Routing, SourceState, run_gated_stream


class EmptyStreamError(ValueError):
    pass


class MisalignedStreamError(ValueError):
    pass


class ZeroAccidentalError(ArithmeticError):
    pass


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


def singles_rate(stream: ClickStream) -> tuple[float, float]:
    """Clicks per live gate with its binomial standard error."""
    live = stream.n_live
    if live < 1:
        raise EmptyStreamError(f"stream {stream.channel.value} has no live gates")
    p = stream.n_clicks / live
    return p, math.sqrt(p * (1.0 - p) / live)


def _union_length(start: np.ndarray, stop: np.ndarray) -> int:
    if start.size == 0:
        return 0
    order = np.argsort(start, kind="stable")
    s, e = start[order], stop[order]
    reach = np.maximum.accumulate(e)
    new = np.empty(s.size, dtype=bool)
    new[0] = True
    new[1:] = s[1:] > reach[:-1]
    heads = np.flatnonzero(new)
    ends = np.maximum.reduceat(e, heads)
    return int(np.sum(ends - s[heads]))


def coincidences(a: ClickStream, b: ClickStream, offset: int = 0) -> tuple[int, int]:
    """(count, usable gates) for A clicking at g and B clicking at g + offset.

    A gate pair is usable only when A is live at g and B is live at
    g + offset; gates blinded on either side are dropped from both the count
    and the denominator.
    """
    if a.n_gates != b.n_gates:
        raise MisalignedStreamError(f"streams cover {a.n_gates} and {b.n_gates} gates")
    if offset < 0:
        raise ValueError("offset must be non-negative")
    span = a.n_gates - offset
    if span <= 0:
        warnings.warn(f"offset {offset} leaves no overlapping gates", stacklevel=2)
        return 0, 0
    count = int(np.intersect1d(a.click_gates + offset, b.click_gates, assume_unique=True).size)
    sa, ea = a.dead_intervals()
    sb, eb = b.dead_intervals()
    start = np.concatenate([sa, sb - offset])
    stop = np.concatenate([ea, eb - offset])
    start = np.clip(start, 0, span)
    stop = np.clip(stop, 0, span)
    keep = stop > start
    return count, span - _union_length(start[keep], stop[keep])


def coincidence_counts(a: ClickStream, b: ClickStream, offset: int = 0) -> int:
    return coincidences(a, b, offset)[0]


@dataclass(frozen=True)
class CoincidenceResult:
    true_coinc: int
    accidental_coinc: int
    gates_used: int
    accidental_gates: int
    rate_true: float
    rate_accidental: float
    g2: float
    g2_error: float


def estimate_g2(stream_1: ClickStream, stream_2: ClickStream, accidental_offset: int = 1) -> CoincidenceResult:
    """Coincidence-to-accidental rate ratio behind a splitter."""
    c0, g0 = coincidences(stream_1, stream_2, 0)
    c1, g1 = coincidences(stream_1, stream_2, accidental_offset)
    if c1 == 0:
        raise ZeroAccidentalError("no accidental coincidences; g2 undefined")
    r0, r1 = c0 / g0, c1 / g1
    g2 = r0 / r1
    err = g2 * math.sqrt(1.0 / c1 + (1.0 / c0 if c0 else 0.0)) if c0 else float("inf")
    return CoincidenceResult(c0, c1, g0, g1, r0, r1, g2, err)


def measure_g2(
    state: SourceState,
    det_1: DetectorSpec,
    det_2: DetectorSpec,
    n_gates: int,
    seeds: SeedTree,
    split_ratio: float = 0.5,
    workers: int | None = None,
) -> CoincidenceResult:
    """Send one arm through a splitter onto two gated detectors and estimate g2."""
    s1, s2 = run_gated_stream(state, det_1, det_2, n_gates, seeds, Routing.SPLIT, split_ratio, workers)
    return estimate_g2(s1, s2)


def _split_click(state: SourceState, x1: float, x2: float, split_ratio: float, dark: float) -> float:
    """P(at least one click) behind the splitter, weights x1/x2 on the two ports.

    Every signal-arm mode is thermal, so no-click probabilities multiply as
    1 / (1 + m w); logs keep the faint-light limit free of cancellation.
    """
    r = state.raman_mode_count
    means = np.concatenate([state.mode_means, np.full(r, state.raman_mean_s / r)])
    w = split_ratio * x1 + (1.0 - split_ratio) * x2
    return float(-np.expm1(math.log1p(-dark) - np.sum(np.log1p(means * w))))


def expected_g2_estimate(
    state: SourceState,
    det_1: DetectorSpec,
    det_2: DetectorSpec,
    split_ratio: float = 0.5,
    accidental_offset: int = 1,
) -> float:
    """Long-run expectation of :func:`estimate_g2` for a split arm.

    Per-gate click probabilities come from the thermal generating function.
    Dead time makes the pair (gates still blind on 1, gates still blind on 2)
    a Markov chain; its stationary law gives the live-gate coincidence rate
    and the offset rate, including the correlation between a click at g and
    blindness at g + 1. Saturation, dark counts and Raman light all enter, so
    this is what the simulated estimator converges to rather than the
    photon-level g2.
    """
    if accidental_offset < 1:
        raise ValueError("accidental_offset must be >= 1")
    e1, e2 = det_1.total_efficiency, det_2.total_efficiency
    d1, d2 = det_1.dark_count_prob, det_2.dark_count_prob
    p1 = _split_click(state, e1, 0.0, split_ratio, d1)
    p2 = _split_click(state, 0.0, e2, split_ratio, d2)
    either = _split_click(state, e1, e2, split_ratio, 1.0 - (1.0 - d1) * (1.0 - d2))
    p12 = p1 + p2 - either
    q12 = 1.0 - either
    outcomes = {(1, 1): p12, (1, 0): p1 - p12, (0, 1): p2 - p12, (0, 0): q12}

    dead_1, dead_2 = det_1.dead_gates, det_2.dead_gates
    n2 = dead_2 + 1
    size = (dead_1 + 1) * n2
    step = np.zeros((size, size))
    step_fire = np.zeros((size, size))
    for a in range(dead_1 + 1):
        for b in range(n2):
            for (f1, f2), p in outcomes.items():
                na = dead_1 if (a == 0 and f1) else max(a - 1, 0)
                nb = dead_2 if (b == 0 and f2) else max(b - 1, 0)
                step[a * n2 + b, na * n2 + nb] += p
                if a == 0 and f1:
                    step_fire[a * n2 + b, na * n2 + nb] += p

    lhs = np.vstack([step.T - np.eye(size), np.ones(size)])
    rhs = np.zeros(size + 1)
    rhs[-1] = 1.0
    pi = np.linalg.lstsq(lhs, rhs, rcond=None)[0]

    live_1 = np.repeat(np.arange(dead_1 + 1) == 0, n2).astype(float)
    live_2 = np.tile(np.arange(n2) == 0, dead_1 + 1).astype(float)
    later = np.linalg.matrix_power(step, accidental_offset - 1)
    start = pi * live_1
    fired, reached = start @ step_fire @ later, start @ step @ later
    rate_acc = (fired @ live_2) * p2 / (reached @ live_2)
    if rate_acc <= 0:
        return float("nan")
    # given both detectors live, a coincidence needs only the joint click
    return float(p12 / rate_acc)


def photons_per_pulse(click_rate: float, det: DetectorSpec) -> float:
    """Mean photons at the detector input inferred from a click rate, dark counts removed."""
    q = (click_rate - det.dark_count_prob) / (1.0 - det.dark_count_prob)
    q = min(max(q, 0.0), 1.0 - 1e-15)
    return -math.log1p(-q) / det.total_efficiency


def photon_coincidence_rate(
    rate_ab: float, rate_a: float, rate_b: float, det_a: DetectorSpec, det_b: DetectorSpec
) -> float:
    """Joint click probability from photons alone, divided by both detection efficiencies.

    Inverts independent dark counts on each channel: with d the dark
    probability, P(no click) = (1 - d) P_photon(no click).
    """
    da, db = det_a.dark_count_prob, det_b.dark_count_prob
    none_a = (1.0 - rate_a) / (1.0 - da)
    none_b = (1.0 - rate_b) / (1.0 - db)
    none_ab = (1.0 - rate_a - rate_b + rate_ab) / ((1.0 - da) * (1.0 - db))
    photon_ab = 1.0 - none_a - none_b + none_ab
    return photon_ab / (det_a.total_efficiency * det_b.total_efficiency)


@dataclass(frozen=True)
class FitResult:
    powers: tuple[int, ...]
    coefficients: np.ndarray
    stderr: np.ndarray
    residual_norm: float
    r_squared: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return sum(c * x**k for c, k in zip(self.coefficients, self.powers))

    def contribution(self, power: int, x: float) -> float:
        """Fraction of the fitted value at ``x`` carried by the ``power`` term."""
        k = self.powers.index(power)
        total = float(self.predict(x))
        return float(self.coefficients[k] * x**power / total) if total else 0.0

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.powers, map(float, self.coefficients)))


def fit_polynomial(x, y, powers, nonneg: bool = False, sigma=None) -> FitResult:
    """Least squares over the monomials ``x**k`` for k in ``powers``.

    ``sigma`` weights the residuals (1/sigma). With ``nonneg`` the problem is
    solved by the Lawson-Hanson active-set NNLS and coefficients pinned at
    zero get a zero standard error.
    """
    powers = tuple(int(k) for k in powers)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(set(powers)) != len(powers):
        raise RankDeficiencyError(f"duplicated powers {powers}")
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length vectors")
    if x.size < len(powers) + 1:
        raise ValueError(f"need at least {len(powers) + 1} points, got {x.size}")
    if np.any(x <= 0):
        raise ValueError("abscissae must be positive")
    if np.unique(x).size < len(powers):
        raise RankDeficiencyError("too few distinct abscissae for the requested powers")

    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    design = x[:, None] ** np.array(powers, dtype=float)[None, :]
    a = design * w[:, None]
    b = y * w
    scale = np.linalg.norm(a, axis=0)
    a_s = a / scale
    if np.linalg.matrix_rank(a_s) < len(powers):
        raise RankDeficiencyError("design matrix is rank deficient")

    if nonneg:
        coef_s, _ = nnls(a_s, b)
    else:
        coef_s = np.linalg.lstsq(a_s, b, rcond=None)[0]
    coef = coef_s / scale

    resid = b - a_s @ coef_s
    dof = max(x.size - len(powers), 1)
    free = np.ones(len(powers), dtype=bool) if not nonneg else coef_s > 0
    stderr = np.zeros(len(powers))
    if free.any():
        af = a_s[:, free]
        s2 = float(resid @ resid) / dof
        cov = np.linalg.pinv(af.T @ af) * s2
        stderr[free] = np.sqrt(np.diag(cov)) / scale[free]

    ss_res = float(np.sum((y - design @ coef) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(powers, coef, stderr, float(np.linalg.norm(resid)), max(0.0, min(1.0, r2)))
