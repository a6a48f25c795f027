"""Butterworth bandpass filtering of raw single-lead ECG."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import signal

from afbeat.io_formats import EcgRecordBundle


@dataclass(frozen=True)
class FilterSpec:
    fs: float = 200.0
    low_hz: float = 0.5
    high_hz: float = 50.0
    order: int = 4

    def validate(self) -> None:
        if self.fs <= 0:
            raise ValueError(f"invalid filter spec: fs={self.fs} must be positive")
        if not self.low_hz > 0:
            raise ValueError(f"invalid filter spec: low_hz={self.low_hz} must be > 0")
        if not self.low_hz < self.high_hz:
            raise ValueError(f"invalid filter spec: low_hz={self.low_hz} must be < high_hz={self.high_hz}")
        if not self.high_hz < self.fs / 2:
            raise ValueError(f"invalid filter spec: high_hz={self.high_hz} must be < fs/2={self.fs / 2}")
        if self.order < 1:
            raise ValueError(f"invalid filter spec: order={self.order} must be >= 1")


def design_bandpass(spec: FilterSpec) -> np.ndarray:
    """Second-order sections of a digital Butterworth bandpass.

    ``spec.order`` is the lowpass prototype order, so the bandpass has
    ``2 * order`` poles (``order`` sections).
    """
    spec.validate()
    return signal.butter(spec.order, [spec.low_hz, spec.high_hz], btype="bandpass", output="sos", fs=spec.fs)


def sos_gain(sos: np.ndarray, freqs_hz, fs: float) -> np.ndarray:
    """Magnitude response of ``sos`` at the given frequencies."""
    freqs_hz = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    z = np.exp(1j * 2 * np.pi * freqs_hz / fs)
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
    return np.abs(h)


def filter_signal(samples, spec: FilterSpec) -> np.ndarray:
    """Zero-phase (forward-backward) bandpass with odd-reflection edge padding.

    The effective magnitude response is the square of the designed one.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("filter_signal needs a non-empty 1-D signal")
    sos = design_bandpass(spec)
    padlen = 3 * (2 * len(sos) + 1)
    if x.size <= padlen:
        padlen = x.size - 1
    return signal.sosfiltfilt(sos, x, padtype="odd", padlen=padlen)


def filter_bundle(bundle: EcgRecordBundle, spec: FilterSpec | None = None) -> EcgRecordBundle:
    """Copy of ``bundle`` with filtered samples; annotations are kept as given."""
    spec = dataclasses.replace(spec or FilterSpec(), fs=bundle.fs)
    return dataclasses.replace(bundle, samples=filter_signal(bundle.samples, spec))
