"""Synthetic single-lead recordings with a P/T-wave class signal.

Every beat is a sum of Gaussian bumps placed relative to its R-peak
(offsets in seconds, amplitudes in signal units):

=========  ========  =========  =======
component  offset    amplitude  width
=========  ========  =========  =======
P          -0.16     0.15       0.025
Q          -0.02     -0.10      0.008
R           0.00      1.00      0.010
S          +0.02     -0.20      0.008
T          +0.30      0.30      0.050
=========  ========  =========  =======

AF-patient (label 1) sinus beats scale P by ``U(0, 0.5)`` and T by
``U(0.3, 1.0)``, drawn per beat. White noise with sigma 0.05 is added to the
whole recording. Premature atrial (``A``) and ventricular (``V``) beats are
sprinkled in, and label-1 patients get one AF episode whose beats carry an
irregular rhythm, no P wave, fibrillatory waves and beat type ``other``.
"""

from __future__ import annotations

import numpy as np

from afbeat.io_formats import EcgRecordBundle

FS = 200
NOISE_SIGMA = 0.05

# (offset s, amplitude, width s)
P_WAVE = (-0.16, 0.15, 0.025)
QRS = ((-0.02, -0.10, 0.008), (0.0, 1.0, 0.010), (0.02, -0.20, 0.008))
T_WAVE = (0.30, 0.30, 0.050)
P_WINDOW = (-0.26, -0.06)


def _bump(signal, t, center, amp, width):
    lo = max(0, int((center - 5 * width) * FS))
    hi = min(len(signal), int((center + 5 * width) * FS) + 2)
    if hi > lo:
        signal[lo:hi] += amp * np.exp(-0.5 * ((t[lo:hi] - center) / width) ** 2)


def _sinus_beat(signal, t, r, p_scale, t_scale, gain):
    _bump(signal, t, r + P_WAVE[0], gain * p_scale * P_WAVE[1], P_WAVE[2])
    for off, amp, width in QRS:
        _bump(signal, t, r + off, gain * amp, width)
    _bump(signal, t, r + T_WAVE[0], gain * t_scale * T_WAVE[1], T_WAVE[2])


def _ventricular_beat(signal, t, r, gain):
    _bump(signal, t, r, gain * 1.2, 0.04)
    _bump(signal, t, r + 0.08, gain * -0.4, 0.04)
    _bump(signal, t, r + 0.32, gain * -0.3, 0.06)


def generate_patient(index: int, label: int, n_beats: int, rng: np.random.Generator,
                     ectopic: bool = True, af_episode: bool = True) -> EcgRecordBundle:
    """One recording with ``n_beats`` R-peaks in the usable range (ordinals 10..k-5)."""
    n_peaks = n_beats + 14
    gain = rng.uniform(0.9, 1.1)
    base_rr = rng.uniform(0.8, 1.1)
    types = ["N"] * n_peaks
    if ectopic:
        for i in range(1, n_peaks - 1):
            u = rng.random()
            if u < 0.03:
                types[i] = "A"
            elif u < 0.05:
                types[i] = "V"
    af_range = None
    if label == 1 and af_episode and n_peaks >= 40:
        length = max(10, n_peaks // 10)
        start = int(rng.integers(n_peaks // 3, n_peaks - length - 10))
        af_range = (start, start + length)
        for i in range(*af_range):
            types[i] = "other"

    rr = np.empty(n_peaks)
    for i in range(n_peaks):
        if types[i] == "other":
            rr[i] = rng.uniform(0.45, 0.9)
        else:
            rr[i] = base_rr + rng.normal(0, 0.03)
            if types[i] in ("A", "V"):
                rr[i] *= 0.7
    r_times = 0.6 + np.concatenate([[0.0], np.cumsum(rr[:-1])])
    duration = r_times[-1] + 0.8
    n_samples = int(np.ceil(duration * FS))
    t = np.arange(n_samples) / FS
    sig = np.zeros(n_samples)

    for i, r in enumerate(r_times):
        kind = types[i]
        if kind == "V":
            _ventricular_beat(sig, t, r, gain)
        elif kind == "other":
            _sinus_beat(sig, t, r, 0.0, rng.uniform(0.6, 1.0), gain)
        else:
            if label == 1:
                p_scale, t_scale = rng.uniform(0.0, 0.5), rng.uniform(0.3, 1.0)
            else:
                p_scale, t_scale = 1.0, 1.0
            if kind == "A":
                p_scale *= -0.6
            _sinus_beat(sig, t, r, p_scale, t_scale, gain)

    af_episodes = []
    if af_range is not None:
        start_s = int(round((r_times[af_range[0]] - 0.3) * FS))
        end_s = int(round((r_times[af_range[1] - 1] + 0.3) * FS))
        seg = slice(start_s, end_s)
        tt = t[seg]
        sig[seg] += 0.05 * np.sin(2 * np.pi * 6.0 * tt + rng.uniform(0, 2 * np.pi))
        sig[seg] += 0.03 * np.sin(2 * np.pi * 4.3 * tt + rng.uniform(0, 2 * np.pi))
        af_episodes.append((start_s, end_s))

    sig += rng.normal(0.0, NOISE_SIGMA, n_samples)
    rpeaks = np.round(r_times * FS).astype(np.int64)
    return EcgRecordBundle(
        record_id=f"synth_{index:03d}", fs=FS, samples=sig, rpeaks=rpeaks, beat_types=types,
        af_episodes=af_episodes, patient_label=label, segment_count=1,
        patient_id=f"patient_{index:03d}",
    )


def generate_synthetic(n_patients: int, beats_per_patient: int, seed: int, ectopic: bool = True,
                       af_episode: bool = True) -> list[EcgRecordBundle]:
    """``n_patients`` recordings, alternating labels 0, 1, 0, 1, ..."""
    if n_patients < 2:
        raise ValueError("need at least 2 patients (one per class)")
    if beats_per_patient < 1:
        raise ValueError("beats_per_patient must be >= 1")
    rng = np.random.default_rng(seed)
    return [
        generate_patient(i, i % 2, beats_per_patient, rng, ectopic=ectopic, af_episode=af_episode)
        for i in range(n_patients)
    ]


def p_window_energy(beats: np.ndarray, L: int = 200) -> np.ndarray:
    """Sum of squares over the P-wave window of centred beats."""
    beats = np.atleast_2d(beats)
    c = L // 2
    lo, hi = c + int(P_WINDOW[0] * FS), c + int(P_WINDOW[1] * FS)
    seg = beats[:, lo:hi] - np.median(beats, axis=1, keepdims=True)
    return (seg ** 2).sum(axis=1)
