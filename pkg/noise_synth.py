"""Spatially uncorrelated colored background noise.

Each channel is white Gaussian noise from its own sub-seed, shaped in the
frequency domain by the target magnitude envelope and normalized to unit
RMS.  Green and Hoth envelopes come from two-column text tables in
``MWF_DATA_DIR``.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from room_sim import REFERENCE_MIC
from signal_core import MultichannelSignal

DATA_DIR = os.getenv("MWF_DATA_DIR", os.path.join(os.path.dirname(os.path.abspath(__file__)), "data"))
# Colored noises carry no energy below this (no DC / infrasound drift).
LOW_CUTOFF_HZ = 20.0

WHITE, PINK, RED, GREEN, HOTH = "white", "pink", "red", "green", "hoth"
NOISE_KINDS = (WHITE, PINK, RED, GREEN, HOTH)
ENVELOPE_FILES = {GREEN: "green_envelope.txt", HOTH: "hoth_envelope.txt"}


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #

@dataclass
class NoiseColor:
    kind: str
    envelope_hz: Optional[np.ndarray] = None
    envelope_db: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise color {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind in ENVELOPE_FILES:
            if self.envelope_hz is None or self.envelope_db is None:
                raise ValueError(f"{self.kind} noise needs an envelope table")
            self.envelope_hz = np.asarray(self.envelope_hz, dtype=np.float64)
            self.envelope_db = np.asarray(self.envelope_db, dtype=np.float64)
            if np.any(np.diff(self.envelope_hz) <= 0) or np.any(self.envelope_hz <= 0):
                raise ValueError(f"{self.kind} envelope frequencies must be positive and increasing")
            if not np.all(np.isfinite(self.envelope_db)):
                raise ValueError(f"{self.kind} envelope levels must be finite")

    @classmethod
    def named(cls, kind: str) -> "NoiseColor":
        """Build a color; green and Hoth load their tables from ``DATA_DIR``."""
        if kind in ENVELOPE_FILES:
            hz, db = load_envelope(os.path.join(DATA_DIR, ENVELOPE_FILES[kind]))
            return cls(kind, hz, db)
        return cls(kind)

    def magnitude(self, freqs: np.ndarray) -> np.ndarray:
        """Amplitude weighting (square root of the PSD shape) at ``freqs``."""
        if self.kind == WHITE:
            return np.ones_like(freqs)
        mag = np.zeros_like(freqs)
        band = freqs >= LOW_CUTOFF_HZ
        f = freqs[band]
        if self.kind == PINK:
            mag[band] = f ** -0.5
        elif self.kind == RED:
            mag[band] = 1.0 / f
        else:
            level = np.interp(np.log10(f), np.log10(self.envelope_hz), self.envelope_db)
            mag[band] = 10.0 ** (level / 20.0)
        return mag


@dataclass
class NoiseSpec:
    color: NoiseColor
    seed: int = 0
    channels: int = 2

    def __post_init__(self) -> None:
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")


def load_envelope(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read a ``frequency_hz level_db`` table; ``#`` starts a comment."""
    try:
        table = pd.read_csv(path, comment="#", sep=r"\s+", header=None, names=["frequency_hz", "level_db"])
    except Exception as exc:
        raise RuntimeError(f"Cannot read envelope table {path!r}: {exc}") from exc
    if table.empty:
        raise ValueError(f"envelope table {path!r} is empty")
    return table["frequency_hz"].to_numpy(float), table["level_db"].to_numpy(float)


# --------------------------------------------------------------------------- #
# Generation
# --------------------------------------------------------------------------- #

def generate_noise(spec: NoiseSpec, length_samples: int, rate: int) -> MultichannelSignal:
    """Unit-RMS noise, one independent stream per channel, deterministic in ``spec.seed``."""
    if length_samples <= 0:
        raise ValueError(f"length must be positive, got {length_samples}")

    freqs = np.fft.rfftfreq(length_samples, d=1.0 / rate)
    weights = spec.color.magnitude(freqs)
    streams = np.random.SeedSequence(spec.seed).spawn(spec.channels)

    out = np.empty((spec.channels, length_samples))
    for ch, seq in enumerate(streams):
        white = np.random.default_rng(seq).standard_normal(length_samples)
        shaped = np.fft.irfft(np.fft.rfft(white) * weights, n=length_samples)
        rms = math.sqrt(float(np.mean(shaped ** 2)))
        out[ch] = shaped / rms if rms > 0 else shaped
    logging.debug(f"[noise] {spec.color.kind} x{spec.channels} seed={spec.seed} n={length_samples}")
    return MultichannelSignal(out, rate)


def mix_at_snr(
    speech_components: Dict[str, MultichannelSignal],
    noise: MultichannelSignal,
    target_input_snr_db: float,
    active_segments: Dict[str, np.ndarray],
) -> Tuple[MultichannelSignal, float]:
    """Scale ``noise`` so speech/noise at the reference mics hits the target SNR.

    Each talker is measured at its own reference mic over its active
    samples (``active_segments`` holds boolean sample masks); the speech and
    noise powers are averaged over talkers before the ratio is taken.
    """
    speech_power = []
    noise_power = []
    for label, mask in active_segments.items():
        mask = np.asarray(mask, dtype=bool)
        if not mask.any() or label not in speech_components:
            continue
        mic = REFERENCE_MIC[label]
        speech_power.append(np.mean(speech_components[label].channels[mic][mask] ** 2))
        noise_power.append(np.mean(noise.channels[mic][mask] ** 2))
    if not speech_power:
        raise ValueError("mix_at_snr needs at least one non-empty active segment")

    p_speech = float(np.mean(speech_power))
    p_noise = float(np.mean(noise_power))
    if p_speech <= 0:
        raise ValueError("speech power over the active segments is zero")
    if p_noise <= 0:
        raise ValueError("noise power over the active segments is zero")

    scale = math.sqrt(p_speech / (p_noise * 10.0 ** (target_input_snr_db / 10.0)))
    logging.info(f"[noise] input SNR {target_input_snr_db:.1f} dB -> noise scale {scale:.6g}")
    return noise.scaled(scale), scale
