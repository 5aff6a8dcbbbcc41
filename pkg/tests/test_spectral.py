import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pairsim.spectral import (
    C_NM_PER_PS,
    FiberSpec,
    FilterSpec,
    FrequencyGrid,
    GridError,
    NormalizationError,
    PumpSpec,
    bandwidth_to_omega,
    build_jsa,
    build_pump_spectrum,
    filter_transmission,
    omega_to_wavelength,
    phase_mismatch,
    sum_frequency_envelope,
    wavelength_to_omega,
)

from .conftest import default_jsa


# -- unit conversion -------------------------------------------------------


def test_pump_fwhm_in_angular_frequency():
    # independent arithmetic: 2 pi c dlambda / lambda^2
    expected = 2 * math.pi * 299792.458 * 0.9 / 1538.9**2
    assert PumpSpec().fwhm_omega == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.714, abs=2e-3)


@given(st.floats(1400, 1700))
def test_wavelength_round_trip(lam):
    assert omega_to_wavelength(wavelength_to_omega(lam)) == pytest.approx(lam, rel=1e-13)


# -- grid ------------------------------------------------------------------


@pytest.mark.parametrize("n", [8, 100, 513])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        FrequencyGrid(1200.0, 1230.0, 1.0, n)


def test_grid_rejects_nonpositive_span():
    with pytest.raises(ValueError):
        FrequencyGrid(1200.0, 1230.0, 0.0, 64)


@given(st.sampled_from([16, 64, 256, 1024]), st.floats(0.01, 50))
def test_grid_spacing(n, span):
    g = FrequencyGrid(1200.0, 1230.0, span, n)
    assert g.spacing == pytest.approx(span / (n - 1))
    assert np.allclose(np.diff(g.signal_axis), g.spacing)
    assert g.offsets.sum() == pytest.approx(0.0, abs=1e-9 * span)


# -- pump ------------------------------------------------------------------


def test_pump_spectrum_fwhm_and_norm():
    pump = PumpSpec()
    w = pump.center_omega + np.linspace(-4, 4, 4001) * pump.fwhm_omega
    spec = build_pump_spectrum(pump, w)
    assert spec.norm() == pytest.approx(1.0, abs=1e-12)
    assert spec.intensity_fwhm() == pytest.approx(pump.fwhm_omega, rel=1e-4)


def test_pump_spectrum_symmetric_on_symmetric_axis():
    pump = PumpSpec()
    w = pump.center_omega + np.linspace(-3, 3, 1001) * pump.fwhm_omega
    amp = build_pump_spectrum(pump, w).amplitude
    assert np.max(np.abs(amp - amp[::-1])) < 1e-12


def test_pump_spectrum_delta_limit():
    narrow = PumpSpec(fwhm_wavelength=1e-6)
    w = narrow.center_omega + np.linspace(-1, 1, 257)
    spec = build_pump_spectrum(narrow, w)
    assert np.count_nonzero(spec.amplitude) == 1
    assert spec.norm() == pytest.approx(1.0)


def test_pump_spectrum_grid_too_narrow():
    pump = PumpSpec()
    w = pump.center_omega + np.linspace(-1.5, 1.5, 101) * pump.fwhm_omega
    with pytest.raises(GridError):
        build_pump_spectrum(pump, w)


def test_pump_power_consistency():
    p = PumpSpec(peak_power=1.0, average_power=None)
    implied = p.peak_power * p.duty_factor * 1e3
    PumpSpec(peak_power=1.0, average_power=implied * 1.005)
    with pytest.raises(ValueError):
        PumpSpec(peak_power=1.0, average_power=implied * 1.05)


def test_pump_rejects_nonpositive_fwhm():
    with pytest.raises(ValueError):
        PumpSpec(fwhm_wavelength=0.0)


# -- fiber and phase matching ----------------------------------------------


def test_fiber_zero_dispersion_bounds():
    FiberSpec(zero_dispersion_wavelength=1536.0)
    with pytest.raises(ValueError):
        FiberSpec(zero_dispersion_wavelength=1541.0)
    with pytest.raises(ValueError):
        FiberSpec(length=0.0)


def test_degenerate_point_has_zero_mismatch():
    fiber = FiberSpec()
    w = wavelength_to_omega(1538.9)
    assert phase_mismatch(w, w, fiber, 0.0) == pytest.approx(0.0, abs=1e-12)


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0, 2))
def test_mismatch_exchange_symmetric(ds, di, power):
    fiber = FiberSpec()
    w0 = wavelength_to_omega(1538.9)
    a = phase_mismatch(w0 + ds, w0 + di, fiber, power)
    b = phase_mismatch(w0 + di, w0 + ds, fiber, power)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def _brute_force_mismatch(lam_s, lam_i, lam0, slope):
    # beta3 from D' = dD/dlambda at lambda0, then the cubic Taylor term with beta2(lambda0) = 0
    w0 = 2 * math.pi * C_NM_PER_PS / lam0
    b3 = slope * lam0**4 / (2 * math.pi * C_NM_PER_PS) ** 2
    ws = 2 * math.pi * C_NM_PER_PS / lam_s
    wi = 2 * math.pi * C_NM_PER_PS / lam_i
    wp = (ws + wi) / 2

    def beta(w):
        return b3 / 6 * (w - w0) ** 3

    return beta(ws) + beta(wi) - 2 * beta(wp)


def test_broad_phase_matching_at_eight_nm():
    fiber = FiberSpec(zero_dispersion_wavelength=1538.9)
    lam_p = 1538.9
    for det in (8.0, -8.0):
        ls, li = lam_p + det, 1 / (2 / lam_p - 1 / (lam_p + det))
        dk = phase_mismatch(wavelength_to_omega(ls), wavelength_to_omega(li), fiber, 0.0)
        oracle = _brute_force_mismatch(ls, li, 1538.9, 0.075)
        assert dk == pytest.approx(oracle, rel=1e-9, abs=1e-12)
        assert abs(dk * fiber.length / 2) < math.pi / 4


def test_nonlinear_offset():
    fiber = FiberSpec()
    w = wavelength_to_omega(1538.0)
    assert phase_mismatch(w, w, fiber, 1.0) == pytest.approx(2 * fiber.nonlinear_coefficient)


# -- filters ---------------------------------------------------------------


def test_filter_peak_and_half_width():
    f = FilterSpec(1546.9, 0.33)
    c, hw = f.center_omega, f.fwhm_omega / 2
    assert filter_transmission(f, c) == pytest.approx(1.0)
    for w in (c - hw, c + hw):
        assert abs(filter_transmission(f, w)) ** 2 == pytest.approx(0.5, abs=1e-9)


@given(st.integers(1, 8), st.floats(0.05, 5.0))
def test_supergaussian_half_power_points(order, fwhm):
    f = FilterSpec(1530.9, fwhm, "supergaussian", order)
    hw = f.fwhm_omega / 2
    assert abs(filter_transmission(f, f.center_omega + hw)) ** 2 == pytest.approx(0.5, abs=1e-9)
    # closed form: exp(-ln2 * 2^(2m)) at the full-width point
    expected = math.exp(-math.log(2) * 2 ** (2 * order))
    assert abs(filter_transmission(f, f.center_omega + 2 * hw)) ** 2 == pytest.approx(expected, rel=1e-6)


def test_filter_flat_phase():
    f = FilterSpec(1546.9, 1.0, "supergaussian", 3)
    t = filter_transmission(f, f.center_omega + np.linspace(-0.6, 0.6, 101) * f.fwhm_omega)
    assert np.all(t.imag == 0) and np.all(t.real > 0)


# -- JSA -------------------------------------------------------------------


def test_jsa_normalized(jsa):
    assert jsa.total_probability() == pytest.approx(1.0, abs=1e-9)


@given(st.floats(0.1, 3.0), st.floats(0.26, 1.3), st.sampled_from(["pump", "autoconvolution"]))
def test_jsa_normalized_everywhere(fwhm, pump_fwhm, envelope):
    pump = PumpSpec(fwhm_wavelength=pump_fwhm)
    fs, fi = FilterSpec(1546.9, fwhm), FilterSpec(1530.9, fwhm)
    grid = FrequencyGrid.for_setup(pump, fs, fi, 64)
    jsa = build_jsa(pump, FiberSpec(), fs, fi, grid, envelope)
    assert jsa.total_probability() == pytest.approx(1.0, abs=1e-9)


def test_jsa_is_immutable(jsa):
    with pytest.raises(ValueError):
        jsa.amplitude[0, 0] = 1.0


def test_jsa_exchange_symmetry():
    pump = PumpSpec(center_wavelength=1538.0)
    fiber = FiberSpec(zero_dispersion_wavelength=1538.0)
    lam_s = 1546.0
    lam_i = float(omega_to_wavelength(2 * pump.center_omega - wavelength_to_omega(lam_s)))
    fs, fi = FilterSpec(lam_s, 0.6), FilterSpec(lam_i, 0.6)
    g = FrequencyGrid.for_setup(pump, fs, fi, 128)
    swapped = FrequencyGrid(g.center_idler, g.center_signal, g.span, g.n_points)
    a = build_jsa(pump, fiber, fs, fi, g)
    b = build_jsa(pump, fiber, fi, fs, swapped)
    assert np.max(np.abs(np.abs(a.amplitude) - np.abs(b.amplitude).T)) < 1e-9 * np.abs(a.amplitude).max()


def test_jsa_energy_ridge_for_broad_filters():
    # wide filters and flat phase matching: amplitude depends on omega_s + omega_i alone
    pump = PumpSpec()
    fiber = FiberSpec(length=1e-6, nonlinear_coefficient=0.0)
    fs, fi = FilterSpec(1546.9, 200.0), FilterSpec(1530.9, 200.0)
    g = FrequencyGrid(fs.center_omega, fi.center_omega, 6 * pump.fwhm_omega, 64)
    a = np.abs(build_jsa(pump, fiber, fs, fi, g).amplitude)
    anti_diag = np.array([a[i, 63 - i] for i in range(64)])
    assert np.ptp(anti_diag) < 1e-3 * anti_diag.max()
    env = sum_frequency_envelope(pump, g.signal_axis[:, None] + g.idler_axis[None, :])
    assert np.allclose(a / a.max(), env / env.max(), atol=1e-3)


def test_jsa_requires_centered_filters():
    pump = PumpSpec()
    fs, fi = FilterSpec(1546.9, 0.33), FilterSpec(1530.9, 0.33)
    g = FrequencyGrid.for_setup(pump, fs, fi, 64)
    with pytest.raises(GridError):
        build_jsa(pump, FiberSpec(), FilterSpec(1547.5, 0.33), fi, g)


def test_jsa_normalization_failure():
    # pump envelope falls to exactly zero in double precision far off the filter band
    pump = PumpSpec(center_wavelength=1500.0, fwhm_wavelength=0.26)
    fs, fi = FilterSpec(1546.9, 0.1), FilterSpec(1530.9, 0.1)
    g = FrequencyGrid.for_setup(pump, fs, fi, 16)
    with pytest.raises(NormalizationError):
        build_jsa(pump, FiberSpec(), fs, fi, g)


def test_signal_marginal_normalized(jsa):
    m = jsa.signal_marginal()
    assert m.norm() == pytest.approx(1.0, rel=1e-9)


def test_jsa_csv_export(tmp_path):
    jsa = default_jsa(16)
    path = jsa.to_csv(tmp_path / "jsa.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "omega_s,omega_i,re,im"
    assert len(lines) == 1 + 16 * 16
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.allclose(data[:, 2] + 1j * data[:, 3], jsa.amplitude.ravel(), rtol=1e-10, atol=1e-12)


def test_bandwidth_conversion_matches_pump():
    assert bandwidth_to_omega(0.33, 1546.9) == pytest.approx(FilterSpec(1546.9, 0.33).fwhm_omega)
