import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from pairsim.modes import SchmidtSpectrum
from pairsim.rng import SeedTree, worker_count
from pairsim.sampler import (
    BLOCK_GATES,
    Calibration,
    Channel,
    ClickStream,
    DetectorSpec,
    Routing,
    SourceState,
    apply_dead_time,
    click_probability,
    derive_source_state,
    detect,
    run_gated_stream,
    sample_pulse,
    sample_pulses,
    thermal_events,
    write_click_csv,
)
from pairsim.spectral import PumpSpec

SINGLE = SchmidtSpectrum.from_weights([1.0])
TWO = SchmidtSpectrum.from_weights([0.5, 0.5])


def _pump(p_mw):
    return PumpSpec(peak_power=None, average_power=p_mw)


def _geometric_pmf(k, mean):
    return mean**k / (1 + mean) ** (k + 1)


def _chi2_pvalue(counts, pmf):
    """Chi-square of integer samples against ``pmf(k)``, tail pooled where expectation < 5."""
    n = counts.size
    observed, expected = [], []
    k = 0
    while n * pmf(k) >= 5:
        observed.append(np.count_nonzero(counts == k))
        expected.append(n * pmf(k))
        k += 1
    observed.append(np.count_nonzero(counts >= k))
    expected.append(n - sum(expected))
    return stats.chisquare(observed, expected).pvalue


def _batch_g2(n, batches=100):
    parts = np.array_split(n.astype(float), batches)
    vals = [np.mean(p * (p - 1)) / np.mean(p) ** 2 for p in parts]
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(batches))


# -- source state ------------------------------------------------------------


def test_zero_power_gives_zero_means():
    s = derive_source_state(_pump(0.0), SINGLE, Calibration())
    assert (s.pair_mean, s.raman_mean_s, s.raman_mean_i) == (0.0, 0.0, 0.0)


def test_pure_fwm_quadratic_scaling():
    cal = Calibration(linear_coeff=0.0, quad_coeff=0.1)
    a = derive_source_state(_pump(0.3), SINGLE, cal)
    b = derive_source_state(_pump(0.6), SINGLE, cal)
    assert a.signal_mean == pytest.approx(0.1 * 0.3**2)
    assert b.pair_mean == pytest.approx(4 * a.pair_mean)
    assert b.raman_mean_s == 0.0


@given(st.floats(0, 100), st.floats(0, 1), st.floats(0, 1))
def test_mean_decomposition(p, lin, quad):
    s = derive_source_state(_pump(p), TWO, Calibration(lin, quad))
    assert s.pair_mean == pytest.approx(quad * p * p)
    assert s.raman_mean_s == pytest.approx(lin * p)
    assert np.all(s.mode_means >= 0)


def test_negative_coefficient_rejected():
    with pytest.raises(ValueError):
        Calibration(linear_coeff=-0.1)


# -- pulse sampling ------------------------------------------------------------


def test_empty_source_gives_empty_record():
    rec = sample_pulse(SourceState(0.0, SINGLE), np.random.default_rng(0))
    assert rec.signal_total == rec.idler_total == 0


def test_pair_symmetry_per_mode():
    state = SourceState(2.0, SchmidtSpectrum.from_weights([0.6, 0.3, 0.1]), 0.1, 0.2)
    batch = sample_pulses(state, 2000, np.random.default_rng(1))
    for i in range(0, 2000, 97):
        rec = batch.record(i)
        assert np.array_equal(rec.n_signal_by_mode, rec.n_idler_by_mode)
        assert rec.n_signal_by_mode.sum() == batch.fwm_totals()[i]


def test_single_mode_moments():
    n = sample_pulses(SourceState(0.1, SINGLE), 10**6, np.random.default_rng(2)).signal_totals()
    mean_err = math.sqrt(0.1 * 1.1 / n.size)
    assert abs(n.mean() - 0.1) < 3 * mean_err
    g2, err = _batch_g2(n)
    assert abs(g2 - 2.0) < 3 * err


def test_two_mode_signal_g2():
    n = sample_pulses(SourceState(0.1, TWO), 10**6, np.random.default_rng(3)).signal_totals()
    g2, err = _batch_g2(n)
    assert abs(g2 - 1.5) < 3 * err


def test_single_mode_counts_are_geometric():
    n = sample_pulses(SourceState(0.5, SINGLE), 10**6, np.random.default_rng(4)).mode_counts(0)
    assert _chi2_pvalue(n, lambda k: _geometric_pmf(k, 0.5)) > 0.001


def test_raman_counts_are_negative_binomial():
    r, mean = 10, 0.8
    state = SourceState(0.0, SINGLE, mean, mean, r)
    n = sample_pulses(state, 10**6, np.random.default_rng(5)).raman_signal()
    law = stats.nbinom(r, 1 / (1 + mean / r))
    assert _chi2_pvalue(n, law.pmf) > 0.001


def test_loss_commutes_with_thermal_statistics():
    rng = np.random.default_rng(6)
    mu, eta, n = 2.0, 0.3, 10**6
    pos, cnt = thermal_events(rng, n, mu)
    thinned = np.zeros(n, dtype=np.int64)
    thinned[pos] = rng.binomial(cnt, eta)
    pos2, cnt2 = thermal_events(rng, n, eta * mu)
    direct = np.zeros(n, dtype=np.int64)
    direct[pos2] = cnt2
    assert stats.ks_2samp(thinned, direct).pvalue > 0.001
    assert _chi2_pvalue(thinned, lambda k: _geometric_pmf(k, eta * mu)) > 0.001


# -- detection -----------------------------------------------------------------


def test_click_probability_examples():
    assert click_probability(0, DetectorSpec(dark_count_prob=0.0)) == 0.0
    assert click_probability(10**6, DetectorSpec()) == pytest.approx(1.0)
    det = DetectorSpec(efficiency=0.09, dark_count_prob=1e-4, channel_loss=0.0)
    assert click_probability(1, det) == pytest.approx(1 - (1 - 1e-4) * 0.91, rel=1e-12)
    assert click_probability(1, det) == pytest.approx(0.09009, abs=1e-5)


def test_total_efficiency_includes_loss():
    assert DetectorSpec().total_efficiency == pytest.approx(0.1 * 10 ** (-0.05))


def test_detect_rejects_negative():
    with pytest.raises(ValueError):
        detect(-1, DetectorSpec(), np.random.default_rng(0))


def test_default_dead_gates():
    assert DetectorSpec().dead_gates == 7
    assert DetectorSpec(dead_time=0.0).dead_gates == 0
    assert DetectorSpec(dead_time=1.7, gate_rate=1000.0).dead_gates == 2


def test_no_dead_time_keeps_every_gate():
    det = DetectorSpec(dead_time=0.0, dark_count_prob=0.3)
    a, b = run_gated_stream(SourceState(0.0, SINGLE), det, det, 10_000, SeedTree(1))
    assert a.n_live == b.n_live == 10_000
    assert sum(1 for _ in a.records()) == 10_000


def test_saturated_detector_period_eight():
    clicks = apply_dead_time(np.arange(800), 7)
    assert np.array_equal(clicks, np.arange(0, 800, 8))
    s = ClickStream.from_raw(Channel.A, 800, np.arange(800), 7)
    assert s.n_live == 100
    assert all(r.clicked for r in s.records())


def test_renewal_click_rate():
    det = DetectorSpec(dark_count_prob=0.01)
    a, _ = run_gated_stream(SourceState(0.0, SINGLE), det, det, 10**6, SeedTree(7))
    rate = a.n_clicks / a.n_gates
    expected = 0.01 / (1 + 7 * 0.01)
    assert abs(rate - expected) < 3 * math.sqrt(expected * (1 - expected) / a.n_gates)


@given(st.lists(st.integers(0, 500), unique=True, max_size=80).map(sorted), st.integers(0, 12))
def test_dead_time_greedy(raw, dead):
    raw = np.array(raw, dtype=np.int64)
    kept = apply_dead_time(raw, dead)
    assert set(kept) <= set(raw)
    assert np.all(np.diff(kept) > dead)
    for g in set(raw) - set(kept):
        prior = kept[kept < g]
        assert prior.size and g - prior[-1] <= dead


@given(st.lists(st.integers(0, 299), unique=True, max_size=60).map(sorted), st.integers(0, 9))
def test_records_skip_dead_gates(raw, dead):
    s = ClickStream.from_raw(Channel.B, 300, np.array(raw, dtype=np.int64), dead)
    recs = list(s.records())
    gates = [r.gate_index for r in recs]
    assert len(gates) == len(set(gates)) == s.n_live
    assert np.array_equal(np.flatnonzero(s.live_mask()), gates)
    assert sum(r.clicked for r in recs) == s.n_clicks


def test_click_csv(tmp_path):
    s = ClickStream.from_raw(Channel.A, 20, np.array([2, 3, 15]), 3)
    path = write_click_csv([s], tmp_path / "clicks.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "gate_index,channel,clicked"
    assert len(lines) - 1 == s.n_live == 20 - 3 - 3
    assert "3,A,1" not in lines and "2,A,1" in lines


# -- streams and reproducibility ----------------------------------------------


def test_stream_deterministic_and_worker_independent():
    state = SourceState(0.5, TWO, 0.01, 0.01)
    det = DetectorSpec()
    n = 2 * BLOCK_GATES + 12345
    runs = [run_gated_stream(state, det, det, n, SeedTree(99), Routing.SPLIT, workers=w) for w in (1, 1, 3)]
    for a, b in runs[1:]:
        assert np.array_equal(a.click_gates, runs[0][0].click_gates)
        assert np.array_equal(b.click_gates, runs[0][1].click_gates)
    other = run_gated_stream(state, det, det, n, SeedTree(100), Routing.SPLIT)
    assert not np.array_equal(other[0].click_gates, runs[0][0].click_gates)


def test_seed_tree_keys_are_independent():
    t = SeedTree(5)
    x = t.generator("a", 1).random(4)
    assert np.array_equal(x, SeedTree(5).child("a").generator(1).random(4))
    assert not np.array_equal(x, t.generator("a", 2).random(4))
    with pytest.raises(ValueError):
        SeedTree(2**64)


def test_worker_env(monkeypatch):
    monkeypatch.setenv("PAIRSIM_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2


def test_split_routing_channel_names():
    det = DetectorSpec()
    a, b = run_gated_stream(SourceState(0.1, SINGLE), det, det, 1000, SeedTree(0), "split")
    assert (a.channel, b.channel) == (Channel.BS1, Channel.BS2)
    with pytest.raises(ValueError):
        run_gated_stream(SourceState(0.1, SINGLE), det, det, 0, SeedTree(0))
