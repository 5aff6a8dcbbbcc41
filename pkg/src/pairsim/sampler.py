"""Monte-Carlo photon numbers per pulse and gated Geiger-mode detection.

Thermal photon numbers are drawn sparsely: for a mode with mean ``m`` the
gates holding at least one photon are a Bernoulli(m/(1+m)) subset, and the
count on such a gate is ``1 + Geometric`` with the Bose-Einstein ratio. That
is the Bose-Einstein law exactly, but the work scales with the number of
photon-bearing gates rather than with the number of gates.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numba
import numpy as np

from .modes import SchmidtSpectrum
from .rng import SeedTree, worker_count
from .spectral import PumpSpec

BLOCK_GATES = 1 << 20
# above this occupation probability a dense uniform draw is cheaper than choice()
_DENSE_THRESHOLD = 0.05


@dataclass(frozen=True)
class Calibration:
    """Photons per pulse per mW (Raman, linear) and per mW^2 (FWM, quadratic)."""

    linear_coeff: float = 0.002
    quad_coeff: float = 0.1

    def __post_init__(self):
        if self.linear_coeff < 0 or self.quad_coeff < 0:
            raise ValueError(f"calibration coefficients must be non-negative: {self}")


@dataclass(frozen=True)
class SourceState:
    pair_mean: float
    schmidt: SchmidtSpectrum
    raman_mean_s: float = 0.0
    raman_mean_i: float = 0.0
    raman_mode_count: int = 10

    def __post_init__(self):
        for name in ("pair_mean", "raman_mean_s", "raman_mean_i"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.raman_mode_count < 1:
            raise ValueError("raman_mode_count must be >= 1")

    @property
    def mode_means(self) -> np.ndarray:
        return self.pair_mean * self.schmidt.significant

    @property
    def signal_mean(self) -> float:
        return self.pair_mean + self.raman_mean_s

    @property
    def idler_mean(self) -> float:
        return self.pair_mean + self.raman_mean_i


def derive_source_state(
    pump: PumpSpec, schmidt: SchmidtSpectrum, calib: Calibration, raman_mode_count: int = 10
) -> SourceState:
    """Split the mean photon number at the pump's average power into FWM pairs and Raman."""
    if pump.average_power is None:
        raise ValueError("pump average_power is required to set the source brightness")
    p = pump.average_power
    raman = calib.linear_coeff * p
    return SourceState(calib.quad_coeff * p**2, schmidt, raman, raman, raman_mode_count)


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 0.10
    dark_count_prob: float = 1e-4  # per gate
    gate_width: float = 2.5  # ns
    gate_rate: float = 625.0  # kHz
    dead_time: float = 10.0  # us
    channel_loss: float = 0.5  # dB

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not 0.0 <= self.dark_count_prob < 1.0:
            raise ValueError(f"dark count probability must lie in [0, 1), got {self.dark_count_prob}")
        if self.dead_time < 0 or self.gate_rate <= 0 or self.channel_loss < 0:
            raise ValueError(f"invalid detector timing or loss: {self}")

    @property
    def total_efficiency(self) -> float:
        return self.efficiency * 10 ** (-self.channel_loss / 10)

    @property
    def dead_gates(self) -> int:
        # us * kHz = 1e-3 gates; round first so 6.999999 does not become 7 -> 8
        return math.ceil(round(self.dead_time * self.gate_rate * 1e-3, 9))


class Channel(str, enum.Enum):
    A = "A"
    B = "B"
    BS1 = "BS1"
    BS2 = "BS2"
    C = "C"
    D = "D"


class Routing(str, enum.Enum):
    PAIRS = "pairs"  # signal -> first detector, idler -> second
    SPLIT = "split"  # signal only, beam-split between the two detectors


@dataclass(frozen=True)
class PulseRecord:
    pulse_index: int
    n_signal_by_mode: np.ndarray
    n_idler_by_mode: np.ndarray
    n_raman_s: int
    n_raman_i: int

    @property
    def signal_total(self) -> int:
        return int(self.n_signal_by_mode.sum()) + self.n_raman_s

    @property
    def idler_total(self) -> int:
        return int(self.n_idler_by_mode.sum()) + self.n_raman_i


@dataclass(frozen=True)
class ClickRecord:
    gate_index: int
    channel: Channel
    clicked: bool


Events = tuple[np.ndarray, np.ndarray]  # (sorted gate positions, counts)

_EMPTY: Events = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))


def bernoulli_positions(rng: np.random.Generator, n: int, q: float) -> np.ndarray:
    """Sorted indices of successes in ``n`` Bernoulli(q) trials."""
    if q <= 0.0 or n == 0:
        return _EMPTY[0]
    if q >= _DENSE_THRESHOLD:
        return np.flatnonzero(rng.random(n) < q)
    k = int(rng.binomial(n, q))
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


def thermal_events(rng: np.random.Generator, n: int, mean: float) -> Events:
    """Bose-Einstein photon numbers with ``mean`` on ``n`` pulses, zeros omitted."""
    if mean <= 0.0:
        return _EMPTY
    pos = bernoulli_positions(rng, n, mean / (1.0 + mean))
    counts = rng.geometric(1.0 / (1.0 + mean), size=pos.size).astype(np.int64)
    return pos, counts


def merge_events(parts: list[Events]) -> Events:
    parts = [p for p in parts if p[0].size]
    if not parts:
        return _EMPTY
    if len(parts) == 1:
        return parts[0]
    pos = np.concatenate([p[0] for p in parts])
    cnt = np.concatenate([p[1] for p in parts])
    uniq, inv = np.unique(pos, return_inverse=True)
    return uniq, np.bincount(inv, weights=cnt, minlength=uniq.size).astype(np.int64)


def _dense(n: int, events: Events) -> np.ndarray:
    out = np.zeros(n, dtype=np.int64)
    out[events[0]] = events[1]
    return out


@dataclass(frozen=True)
class PulseBatch:
    """Photon numbers for ``n_pulses`` consecutive pulses, stored sparsely per mode."""

    n_pulses: int
    fwm: list[Events] = field(repr=False)
    raman_s: list[Events] = field(repr=False)
    raman_i: list[Events] = field(repr=False)

    def mode_counts(self, mode: int) -> np.ndarray:
        return _dense(self.n_pulses, self.fwm[mode])

    def fwm_totals(self) -> np.ndarray:
        return _dense(self.n_pulses, merge_events(self.fwm))

    def raman_signal(self) -> np.ndarray:
        return _dense(self.n_pulses, merge_events(self.raman_s))

    def raman_idler(self) -> np.ndarray:
        return _dense(self.n_pulses, merge_events(self.raman_i))

    def signal_totals(self) -> np.ndarray:
        return self.fwm_totals() + self.raman_signal()

    def idler_totals(self) -> np.ndarray:
        return self.fwm_totals() + self.raman_idler()

    def record(self, i: int) -> PulseRecord:
        by_mode = np.array([self.mode_counts(m)[i] for m in range(len(self.fwm))], dtype=np.int64)
        return PulseRecord(i, by_mode, by_mode.copy(), int(self.raman_signal()[i]), int(self.raman_idler()[i]))


def sample_pulses(state: SourceState, n: int, rng: np.random.Generator) -> PulseBatch:
    """FWM pairs per Schmidt mode plus independent multimode-thermal Raman in each arm."""
    fwm = [thermal_events(rng, n, m) for m in state.mode_means]
    r = state.raman_mode_count
    raman_s = [thermal_events(rng, n, state.raman_mean_s / r) for _ in range(r)]
    raman_i = [thermal_events(rng, n, state.raman_mean_i / r) for _ in range(r)]
    return PulseBatch(n, fwm, raman_s, raman_i)


def sample_pulse(state: SourceState, rng: np.random.Generator) -> PulseRecord:
    return sample_pulses(state, 1, rng).record(0)


def click_probability(n_photons, det: DetectorSpec):
    n = np.asarray(n_photons)
    return 1.0 - (1.0 - det.dark_count_prob) * (1.0 - det.total_efficiency) ** n


def detect(n_photons: int, det: DetectorSpec, rng: np.random.Generator) -> bool:
    if n_photons < 0:
        raise ValueError("photon number must be non-negative")
    return bool(rng.random() < click_probability(n_photons, det))


def detect_events(rng: np.random.Generator, n: int, photons: Events, det: DetectorSpec) -> np.ndarray:
    """Raw (dead-time-free) click gates for photon events plus dark counts."""
    pos, cnt = photons
    p = 1.0 - (1.0 - det.total_efficiency) ** cnt
    hits = pos[rng.random(pos.size) < p]
    dark = bernoulli_positions(rng, n, det.dark_count_prob)
    return np.union1d(hits, dark).astype(np.int64)


@numba.njit(cache=True)
def _greedy_dead_time(raw, dead_gates):
    out = np.empty_like(raw)
    k = 0
    blind_until = -1
    for g in raw:
        if g > blind_until:
            out[k] = g
            k += 1
            blind_until = g + dead_gates
    return out[:k]


def apply_dead_time(raw_clicks: np.ndarray, dead_gates: int) -> np.ndarray:
    """Registered clicks: a click blinds the detector for the next ``dead_gates`` gates."""
    raw_clicks = np.ascontiguousarray(raw_clicks, dtype=np.int64)
    if dead_gates == 0 or raw_clicks.size == 0:
        return raw_clicks
    return _greedy_dead_time(raw_clicks, np.int64(dead_gates))


@dataclass(frozen=True)
class ClickStream:
    """Registered clicks of one detector over ``n_gates`` examined gates.

    Gates inside a dead window are not part of the record; they are implied
    by ``click_gates`` and ``dead_gates``.
    """

    channel: Channel
    n_gates: int
    click_gates: np.ndarray = field(repr=False)
    dead_gates: int = 0

    @property
    def n_clicks(self) -> int:
        return int(self.click_gates.size)

    def dead_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        """Half-open [start, stop) gate ranges during which the detector is blind."""
        start = self.click_gates + 1
        stop = np.minimum(self.click_gates + 1 + self.dead_gates, self.n_gates)
        keep = stop > start
        return start[keep], stop[keep]

    @property
    def n_live(self) -> int:
        start, stop = self.dead_intervals()
        return self.n_gates - int(np.sum(stop - start))

    def live_mask(self) -> np.ndarray:
        mark = np.zeros(self.n_gates + 1, dtype=np.int64)
        start, stop = self.dead_intervals()
        np.add.at(mark, start, 1)
        np.add.at(mark, stop, -1)
        return np.cumsum(mark[:-1]) == 0

    def records(self) -> Iterator[ClickRecord]:
        clicked = np.zeros(self.n_gates, dtype=bool)
        clicked[self.click_gates] = True
        for g in np.flatnonzero(self.live_mask()):
            yield ClickRecord(int(g), self.channel, bool(clicked[g]))

    @classmethod
    def from_raw(cls, channel: Channel, n_gates: int, raw_clicks, dead_gates: int) -> "ClickStream":
        return cls(Channel(channel), n_gates, apply_dead_time(raw_clicks, dead_gates), dead_gates)


def write_click_csv(streams, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gate_index", "channel", "clicked"])
        for stream in streams:
            for rec in stream.records():
                w.writerow([rec.gate_index, rec.channel.value, int(rec.clicked)])
    return path


def _block_raw_clicks(
    state: SourceState,
    det_a: DetectorSpec,
    det_b: DetectorSpec,
    n: int,
    rng: np.random.Generator,
    routing: Routing,
    split_ratio: float,
) -> tuple[np.ndarray, np.ndarray]:
    batch = sample_pulses(state, n, rng)
    fwm = merge_events(batch.fwm)
    signal = merge_events([fwm, *batch.raman_s])
    if routing is Routing.PAIRS:
        to_a, to_b = signal, merge_events([fwm, *batch.raman_i])
    else:
        pos, cnt = signal
        first = rng.binomial(cnt, split_ratio)
        to_a, to_b = (pos, first), (pos, cnt - first)
    return detect_events(rng, n, to_a, det_a), detect_events(rng, n, to_b, det_b)


def _blocks(n_gates: int) -> list[tuple[int, int]]:
    return [(start, min(BLOCK_GATES, n_gates - start)) for start in range(0, n_gates, BLOCK_GATES)]


def run_gated_stream(
    state: SourceState,
    det_a: DetectorSpec,
    det_b: DetectorSpec,
    n_gates: int,
    seeds: SeedTree,
    routing: Routing | str = Routing.PAIRS,
    split_ratio: float = 0.5,
    workers: int | None = None,
) -> tuple[ClickStream, ClickStream]:
    """Sample ``n_gates`` examined pulses through two gated detectors.

    Gates are cut into fixed blocks of ``BLOCK_GATES``, each drawn from the
    stream ``seeds.generator("block", index)``, so the output does not depend
    on ``workers``. Dead time is applied afterwards in one sequential pass.
    """
    if n_gates < 1:
        raise ValueError("n_gates must be >= 1")
    routing = Routing(routing)
    if not 0.0 <= split_ratio <= 1.0:
        raise ValueError(f"split ratio must lie in [0, 1], got {split_ratio}")

    def one(block):
        idx, (start, size) = block
        a, b = _block_raw_clicks(state, det_a, det_b, size, seeds.generator("block", idx), routing, split_ratio)
        return a + start, b + start

    blocks = list(enumerate(_blocks(n_gates)))
    nw = min(worker_count(workers), len(blocks))
    if nw > 1:
        with ThreadPoolExecutor(nw) as pool:
            parts = list(pool.map(one, blocks))
    else:
        parts = [one(b) for b in blocks]
    raw_a = np.concatenate([p[0] for p in parts])
    raw_b = np.concatenate([p[1] for p in parts])
    names = (Channel.A, Channel.B) if routing is Routing.PAIRS else (Channel.BS1, Channel.BS2)
    return (
        ClickStream.from_raw(names[0], n_gates, raw_a, det_a.dead_gates),
        ClickStream.from_raw(names[1], n_gates, raw_b, det_b.dead_gates),
    )
