"""Schmidt decomposition of the joint amplitude and the coherence observables it predicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import JSAMatrix

TRUNCATION = 1e-12


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class SchmidtSpectrum:
    """Normalized Schmidt weights, optionally with the discrete mode vectors.

    ``signal_modes`` holds orthonormal columns, ``idler_modes`` orthonormal
    rows, both as unit vectors over grid samples (not sqrt(d omega) scaled).
    """

    coefficients: np.ndarray
    signal_modes: np.ndarray | None = field(default=None, repr=False)
    idler_modes: np.ndarray | None = field(default=None, repr=False)
    grid_spacing: float | None = None

    def __post_init__(self):
        lam = np.asarray(self.coefficients, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("coefficients must be a non-empty vector")
        if np.any(lam < 0):
            raise ValueError("Schmidt coefficients must be non-negative")
        if abs(lam.sum() - 1.0) > 1e-9:
            raise ValueError(f"Schmidt coefficients sum to {lam.sum():.12g}, expected 1")
        if np.any(np.diff(lam) > 1e-15):
            raise ValueError("Schmidt coefficients must be non-increasing")
        object.__setattr__(self, "coefficients", lam)

    @classmethod
    def from_weights(cls, weights) -> "SchmidtSpectrum":
        """Sort and normalize arbitrary non-negative mode weights."""
        w = np.sort(np.asarray(weights, dtype=float))[::-1]
        return cls(w / w.sum())

    @property
    def significant(self) -> np.ndarray:
        lam = self.coefficients
        return lam[lam >= TRUNCATION]

    def reconstruct(self) -> np.ndarray:
        if self.signal_modes is None or self.idler_modes is None:
            raise ValueError("spectrum carries no mode functions")
        s = np.sqrt(self.coefficients)
        return (self.signal_modes * s) @ self.idler_modes / self.grid_spacing


@dataclass(frozen=True)
class CoherencePrediction:
    mode_number: float
    g2: float
    hom_visibility: float

    @classmethod
    def from_mode_number(cls, K: float) -> "CoherencePrediction":
        return cls(K, predict_g2(K), predict_hom_visibility(K))


def schmidt_decompose(jsa: JSAMatrix) -> SchmidtSpectrum:
    """SVD of the complex amplitude kernel, phase included."""
    dw = jsa.grid.spacing
    try:
        u, s, vh = np.linalg.svd(jsa.amplitude * dw)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"SVD did not converge: {exc}") from exc
    p = s**2
    lam = p / p.sum()
    # SVD output is sorted; enforce exact monotonicity against rounding
    lam = np.minimum.accumulate(lam)
    return SchmidtSpectrum(lam / lam.sum(), u, vh, dw)


def effective_mode_number(spectrum: SchmidtSpectrum) -> float:
    lam = spectrum.significant
    return float(1.0 / np.sum(lam**2))


def _check_mode_number(K: float) -> float:
    K = float(K)
    if not K >= 1.0 - 1e-9:
        raise DomainError(f"mode number must be >= 1, got {K}")
    return max(K, 1.0)


def predict_g2(K: float) -> float:
    """Intensity correlation of one arm of a K-mode thermal source."""
    return 1.0 + 1.0 / _check_mode_number(K)


def predict_hom_visibility(K: float) -> float:
    """Two-fold dip visibility of two independent K-mode thermal fields."""
    return 1.0 / (2.0 * _check_mode_number(K) + 1.0)


def mode_number_for_g2(g2: float) -> float:
    if not 1.0 < g2 <= 2.0:
        raise DomainError(f"g2 must lie in (1, 2], got {g2}")
    return 1.0 / (g2 - 1.0)
