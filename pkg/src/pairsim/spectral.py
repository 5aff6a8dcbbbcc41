"""Pump spectra, filters, fiber phase mismatch and the filtered joint spectral amplitude.

Units throughout: wavelengths in nm, angular frequencies in rad/ps, fiber
lengths in km, propagation constants in 1/km, powers in W.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

C_NM_PER_PS = 299792.458

# intensity exp(-ln2 * |2x/fwhm|^(2m)) -> amplitude carries half the exponent
_LN2 = math.log(2.0)


class GridError(ValueError):
    """Frequency axis cannot represent the requested spectrum."""


class NormalizationError(ValueError):
    """Joint amplitude vanishes on the grid (filters disjoint from the generated band)."""


def wavelength_to_omega(wavelength_nm):
    return 2.0 * np.pi * C_NM_PER_PS / np.asarray(wavelength_nm, dtype=float)


def omega_to_wavelength(omega):
    return 2.0 * np.pi * C_NM_PER_PS / np.asarray(omega, dtype=float)


def bandwidth_to_omega(fwhm_nm: float, center_nm: float) -> float:
    """Convert a wavelength FWHM to angular-frequency FWHM (rad/ps)."""
    return 2.0 * math.pi * C_NM_PER_PS * fwhm_nm / center_nm**2


def omega_to_bandwidth(fwhm_omega: float, center_nm: float) -> float:
    return fwhm_omega * center_nm**2 / (2.0 * math.pi * C_NM_PER_PS)


@dataclass(frozen=True)
class FrequencyGrid:
    """Square signal/idler frequency grid.

    Both axes share ``span`` and ``n_points``; each is symmetric about its
    center, so for the even point counts enforced here the center itself is
    not a sample.
    """

    center_signal: float
    center_idler: float
    span: float
    n_points: int = 512

    def __post_init__(self):
        n = self.n_points
        if n < 16 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 16, got {n}")
        if not self.span > 0:
            raise ValueError(f"span must be positive, got {self.span}")

    @property
    def spacing(self) -> float:
        return self.span / (self.n_points - 1)

    @property
    def offsets(self) -> np.ndarray:
        return np.linspace(-self.span / 2, self.span / 2, self.n_points)

    @property
    def signal_axis(self) -> np.ndarray:
        return self.center_signal + self.offsets

    @property
    def idler_axis(self) -> np.ndarray:
        return self.center_idler + self.offsets

    def refined(self, factor: int = 2) -> "FrequencyGrid":
        return FrequencyGrid(self.center_signal, self.center_idler, self.span, self.n_points * factor)

    @classmethod
    def for_setup(
        cls,
        pump: "PumpSpec",
        filter_s: "FilterSpec",
        filter_i: "FilterSpec",
        n_points: int = 512,
        span_factor: float = 6.0,
    ) -> "FrequencyGrid":
        """Grid centered on the filters, ``span_factor`` times the widest FWHM."""
        widths = (
            pump.fwhm_omega,
            filter_s.fwhm_omega,
            filter_i.fwhm_omega,
        )
        return cls(filter_s.center_omega, filter_i.center_omega, span_factor * max(widths), n_points)


@dataclass(frozen=True)
class PumpSpec:
    center_wavelength: float = 1538.9
    fwhm_wavelength: float = 0.9
    pulse_shape: Literal["gaussian"] = "gaussian"
    peak_power: float | None = 1.0
    average_power: float | None = None  # mW
    repetition_rate: float = 40.0  # MHz

    def __post_init__(self):
        if not self.fwhm_wavelength > 0:
            raise ValueError(f"pump fwhm must be positive, got {self.fwhm_wavelength}")
        if self.pulse_shape != "gaussian":
            raise ValueError(f"unsupported pulse shape {self.pulse_shape!r}")
        if self.peak_power is not None and self.average_power is not None:
            implied = self.peak_power * self.duty_factor * 1e3
            if abs(implied - self.average_power) > 0.01 * max(self.average_power, implied):
                raise ValueError(
                    f"average power {self.average_power} mW inconsistent with peak power "
                    f"{self.peak_power} W (implies {implied:.4g} mW)"
                )

    @property
    def center_omega(self) -> float:
        return float(wavelength_to_omega(self.center_wavelength))

    @property
    def fwhm_omega(self) -> float:
        return bandwidth_to_omega(self.fwhm_wavelength, self.center_wavelength)

    @property
    def pulse_width(self) -> float:
        """Transform-limited intensity FWHM duration in ps."""
        # Gaussian time-bandwidth product 4 ln2 in angular units
        return 4.0 * _LN2 / self.fwhm_omega

    @property
    def duty_factor(self) -> float:
        return self.pulse_width * 1e-12 * self.repetition_rate * 1e6

    def resolved_peak_power(self) -> float:
        if self.peak_power is not None:
            return self.peak_power
        if self.average_power is None:
            raise ValueError("pump needs peak_power or average_power")
        return self.average_power * 1e-3 / self.duty_factor


@dataclass(frozen=True)
class FiberSpec:
    length: float = 0.3  # km
    zero_dispersion_wavelength: float = 1538.0
    dispersion_slope: float = 0.075  # ps/(nm^2 km)
    nonlinear_coefficient: float = 2.0  # 1/(W km)

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"fiber length must be positive, got {self.length}")
        if not 1536.0 <= self.zero_dispersion_wavelength <= 1540.0:
            raise ValueError(
                f"zero-dispersion wavelength {self.zero_dispersion_wavelength} nm outside [1536, 1540]"
            )

    @property
    def zero_dispersion_omega(self) -> float:
        return float(wavelength_to_omega(self.zero_dispersion_wavelength))

    @property
    def beta3(self) -> float:
        """Third-order dispersion in ps^3/km from the slope at the zero-dispersion point."""
        lam0 = self.zero_dispersion_wavelength
        return self.dispersion_slope * lam0**4 / (2.0 * math.pi * C_NM_PER_PS) ** 2

    def beta(self, omega):
        """Propagation constant about the zero-dispersion frequency, constant and group terms dropped.

        They cancel identically in the four-wave-mixing mismatch.
        """
        d = np.asarray(omega, dtype=float) - self.zero_dispersion_omega
        return self.beta3 / 6.0 * d**3


@dataclass(frozen=True)
class FilterSpec:
    center_wavelength: float
    fwhm_wavelength: float
    shape: Literal["gaussian", "supergaussian"] = "gaussian"
    order: int = 1

    def __post_init__(self):
        if not self.fwhm_wavelength > 0:
            raise ValueError(f"filter fwhm must be positive, got {self.fwhm_wavelength}")
        if self.shape not in ("gaussian", "supergaussian"):
            raise ValueError(f"unknown filter shape {self.shape!r}")
        if self.order < 1:
            raise ValueError(f"filter order must be >= 1, got {self.order}")

    @property
    def center_omega(self) -> float:
        return float(wavelength_to_omega(self.center_wavelength))

    @property
    def fwhm_omega(self) -> float:
        return bandwidth_to_omega(self.fwhm_wavelength, self.center_wavelength)

    @property
    def exponent_order(self) -> int:
        return 1 if self.shape == "gaussian" else self.order


@dataclass(frozen=True)
class SpectralAmplitude:
    """Complex amplitude sampled on a uniform angular-frequency axis."""

    omega: np.ndarray
    amplitude: np.ndarray

    @property
    def spacing(self) -> float:
        return float(self.omega[1] - self.omega[0])

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def norm(self) -> float:
        return float(np.sum(self.intensity) * self.spacing)

    def intensity_fwhm(self) -> float:
        """FWHM of |amplitude|^2 by linear interpolation of the half-maximum crossings."""
        inten = self.intensity
        half = inten.max() / 2
        above = np.flatnonzero(inten >= half)
        lo, hi = above[0], above[-1]
        w = self.omega

        def cross(i0, i1):
            y0, y1 = inten[i0], inten[i1]
            return w[i0] + (half - y0) * (w[i1] - w[i0]) / (y1 - y0)

        left = cross(lo - 1, lo) if lo > 0 else w[0]
        right = cross(hi, hi + 1) if hi < len(w) - 1 else w[-1]
        return float(right - left)


def build_pump_spectrum(pump: PumpSpec, omega: np.ndarray) -> SpectralAmplitude:
    """Gaussian pump amplitude on ``omega`` with unit L2 norm.

    A FWHM narrower than the axis spacing collapses to a single bin at the
    sample nearest the pump center.
    """
    omega = np.asarray(omega, dtype=float)
    fwhm = pump.fwhm_omega
    coverage = omega[-1] - omega[0]
    w0 = pump.center_omega
    if coverage < 4 * fwhm or not omega[0] <= w0 <= omega[-1]:
        raise GridError(f"axis covers {coverage:.4g} rad/ps, need >= 4 x FWHM = {4 * fwhm:.4g} around the pump")
    dw = omega[1] - omega[0]
    if fwhm < dw:
        amp = np.zeros(omega.shape, dtype=complex)
        amp[np.argmin(np.abs(omega - w0))] = 1.0
    else:
        amp = gaussian_amplitude(omega - w0, fwhm).astype(complex)
    amp /= math.sqrt(np.sum(np.abs(amp) ** 2) * dw)
    return SpectralAmplitude(omega, amp)


def gaussian_amplitude(detuning, intensity_fwhm: float, order: int = 1) -> np.ndarray:
    x = np.abs(2.0 * np.asarray(detuning, dtype=float) / intensity_fwhm)
    return np.exp(-0.5 * _LN2 * x ** (2 * order))


def filter_transmission(filt: FilterSpec, omega) -> np.ndarray:
    """Flat-phase amplitude transmission, peak 1, intensity FWHM equal to the filter FWHM."""
    amp = gaussian_amplitude(np.asarray(omega) - filt.center_omega, filt.fwhm_omega, filt.exponent_order)
    return amp.astype(complex)


def phase_mismatch(omega_s, omega_i, fiber: FiberSpec, peak_power: float, pump_center=None):
    """Four-wave-mixing wavevector mismatch in 1/km.

    ``pump_center`` defaults to the energy-conserving (omega_s + omega_i)/2.
    """
    omega_s = np.asarray(omega_s, dtype=float)
    omega_i = np.asarray(omega_i, dtype=float)
    omega_p = (omega_s + omega_i) / 2 if pump_center is None else pump_center
    return (
        fiber.beta(omega_s)
        + fiber.beta(omega_i)
        - 2.0 * fiber.beta(omega_p)
        + 2.0 * fiber.nonlinear_coefficient * peak_power
    )


def sum_frequency_envelope(pump: PumpSpec, omega_sum, envelope: str = "pump") -> np.ndarray:
    """Pump-side factor of the pair amplitude as a function of omega_s + omega_i.

    ``"pump"`` evaluates the pump amplitude profile at the sum-frequency
    detuning, so the envelope FWHM along omega_s + omega_i equals the pump
    FWHM. ``"autoconvolution"`` is the convolution of the pump amplitude with
    itself, which for a Gaussian widens that FWHM by sqrt(2).
    """
    detuning = np.asarray(omega_sum, dtype=float) - 2.0 * pump.center_omega
    if envelope == "pump":
        return gaussian_amplitude(detuning, pump.fwhm_omega)
    if envelope == "autoconvolution":
        return gaussian_amplitude(detuning, math.sqrt(2.0) * pump.fwhm_omega)
    raise ValueError(f"unknown envelope model {envelope!r}")


@dataclass(frozen=True)
class JSAMatrix:
    """Normalized joint spectral amplitude; rows index signal, columns idler."""

    grid: FrequencyGrid
    amplitude: np.ndarray = field(repr=False)
    norm: float

    def __post_init__(self):
        self.amplitude.setflags(write=False)

    @property
    def cell(self) -> float:
        return self.grid.spacing**2

    def total_probability(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.cell)

    def signal_marginal(self) -> SpectralAmplitude:
        """Signal intensity spectrum (idler traced out), normalized to unit area.

        Stored as the square root so ``intensity`` returns the spectrum.
        """
        dens = np.sum(np.abs(self.amplitude) ** 2, axis=1) * self.grid.spacing
        dens /= np.sum(dens) * self.grid.spacing
        return SpectralAmplitude(self.grid.signal_axis, np.sqrt(dens).astype(complex))

    def to_csv(self, path) -> Path:
        path = Path(path)
        ws, wi = np.meshgrid(self.grid.signal_axis, self.grid.idler_axis, indexing="ij")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["omega_s", "omega_i", "re", "im"])
            for row in zip(ws.ravel(), wi.ravel(), self.amplitude.real.ravel(), self.amplitude.imag.ravel()):
                w.writerow([f"{v:.12g}" for v in row])
        return path


def build_jsa(
    pump: PumpSpec,
    fiber: FiberSpec,
    filter_s: FilterSpec,
    filter_i: FilterSpec,
    grid: FrequencyGrid,
    envelope: str = "pump",
) -> JSAMatrix:
    """Filtered pair amplitude: pump envelope x phase matching x filter amplitudes."""
    for filt, center, name in ((filter_s, grid.center_signal, "signal"), (filter_i, grid.center_idler, "idler")):
        if abs(filt.center_omega - center) > grid.spacing:
            raise GridError(f"{name} filter center is off the grid center by more than one bin")

    ws = grid.signal_axis[:, None]
    wi = grid.idler_axis[None, :]
    dk = phase_mismatch(ws, wi, fiber, pump.resolved_peak_power())
    half_phase = dk * fiber.length / 2
    phase_matching = np.sinc(half_phase / np.pi) * np.exp(1j * half_phase)

    amp = (
        sum_frequency_envelope(pump, ws + wi, envelope)
        * phase_matching
        * filter_transmission(filter_s, ws)
        * filter_transmission(filter_i, wi)
    )
    norm = float(np.sqrt(np.sum(np.abs(amp) ** 2) * grid.spacing**2))
    if not norm >= 1e-30:
        raise NormalizationError(f"joint amplitude norm {norm:.3g} too small; filters miss the generated band")
    return JSAMatrix(grid, amp / norm, norm)
