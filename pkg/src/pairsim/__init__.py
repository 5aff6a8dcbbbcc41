"""Simulator for pulsed fiber photon-pair sources: spectra, Schmidt modes, gated detection and HOM."""

__version__ = "0.1.0"
