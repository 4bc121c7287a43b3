"""Built-in source material for the cabin experiments.

Recorded 16 kHz phrases are read from ``MWF_SPEECH_DIR`` (default
``data/speech``) when it holds WAV files.  Otherwise utterances are
synthesized: harmonics of a drifting pitch shaped by the long-term
average speech spectrum and per-syllable vowel formants, with syllabic
envelopes and the odd fricative onset.  Programs alternate driver and
passenger turns with silent gaps; talkers never overlap.
"""

from __future__ import annotations

import glob
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import butter, lfilter

from noise_synth import DATA_DIR, load_envelope
from room_sim import DRIVER, PASSENGER
from signal_core import DEFAULT_SAMPLE_RATE, load_wav

SPEECH_DIR = os.getenv("MWF_SPEECH_DIR", os.path.join(DATA_DIR, "speech"))
SPEECH_SPECTRUM_FILE = "speech_spectrum.txt"

# F1, F2, F3 (Hz) of /a/, /i/, /u/, /e/, /o/, /ae/-like vowels.
VOWEL_FORMANTS = (
    (730.0, 1090.0, 2440.0),
    (270.0, 2290.0, 3010.0),
    (300.0, 870.0, 2240.0),
    (530.0, 1840.0, 2480.0),
    (570.0, 840.0, 2410.0),
    (660.0, 1720.0, 2410.0),
)
FORMANT_BANDWIDTHS = (80.0, 100.0, 150.0)
PITCH_DRIFT = 0.08
FRICATIVE_CUTOFF_HZ = 3000.0
FRICATIVE_LEVEL_DB = -20.0
FRICATIVE_ODDS = 0.35
FRICATIVE_S = 0.04
PEAK_LEVEL = 0.5
# Keeps burst streams apart from the noise streams drawn with the same seed.
BURST_ENTROPY = 1


@dataclass
class Turn:
    label: str
    start: float
    end: float


@dataclass
class SpeechProgram:
    """Dry per-talker signals of equal length plus the turn list."""

    sources: Dict[str, np.ndarray]
    sample_rate: int
    turns: List[Turn] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.sources.values())))

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def intervals(self, label: str) -> List[Tuple[float, float]]:
        return [(t.start, t.end) for t in self.turns if t.label == label]


# --------------------------------------------------------------------------- #
# Utterances
# --------------------------------------------------------------------------- #

def _vowel_gains(freqs: np.ndarray) -> np.ndarray:
    """Power gain of each vowel's formant cascade at ``freqs``, shape ``(vowels, freqs)``.

    Gains are divided by their mean over the vowels, so a phrase that uses
    every vowel equally keeps the long-term spectrum it was built on.
    """
    s = 1j * freqs
    gains = np.ones((len(VOWEL_FORMANTS), len(freqs)))
    for v, formants in enumerate(VOWEL_FORMANTS):
        for f, bw in zip(formants, FORMANT_BANDWIDTHS):
            pole = -bw / 2.0 + 1j * f
            gains[v] *= np.abs(abs(pole) ** 2 / ((s - pole) * (s - np.conj(pole)))) ** 2
    return gains / gains.mean(axis=0, keepdims=True)


def speech_spectrum(freqs: np.ndarray) -> np.ndarray:
    """Long-term speech power density at ``freqs`` (linear, relative)."""
    hz, db = load_envelope(os.path.join(DATA_DIR, SPEECH_SPECTRUM_FILE))
    level = np.interp(np.log10(np.maximum(freqs, hz[0])), np.log10(hz), db)
    return 10.0 ** (level / 10.0)


def synth_utterance(rate: int, duration_s: float, f0: float = 120.0, seed: int = 0) -> np.ndarray:
    """A speech-like phrase: harmonic vowels with the odd fricative onset, separated by short pauses.

    Harmonic amplitudes follow the long-term average speech spectrum; each
    syllable colors them with one vowel's formants.
    """
    if duration_s <= 0:
        raise ValueError(f"utterance duration must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate

    pitch = f0 * (1.0 + PITCH_DRIFT * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(pitch) / rate
    # Top harmonic stays below Nyquist at the pitch peak.
    harmonics = np.arange(1, int(0.5 * rate / (f0 * (1.0 + PITCH_DRIFT))) + 1)
    freqs = harmonics * f0
    amplitude = np.sqrt(speech_spectrum(freqs))
    vowels = np.sqrt(_vowel_gains(freqs)) * amplitude
    b, a = butter(4, FRICATIVE_CUTOFF_HZ / (rate / 2), btype="high")
    fricative = lfilter(b, a, rng.standard_normal(n))
    fricative /= np.sqrt(np.mean(fricative ** 2))
    frication = 10.0 ** (FRICATIVE_LEVEL_DB / 20.0)

    out = np.zeros(n)
    pos = int(0.05 * rate)
    while pos < n:
        length = int(rng.uniform(0.15, 0.30) * rate)
        stop = min(pos + length, n)
        carriers = np.sin(harmonics[:, np.newaxis] * phase[np.newaxis, pos:stop])
        voiced = vowels[rng.integers(len(VOWEL_FORMANTS))] @ carriers
        syllable = np.hanning(stop - pos) * voiced
        if rng.random() < FRICATIVE_ODDS:
            onset = min(int(FRICATIVE_S * rate), stop - pos)
            rms = np.sqrt(np.mean(voiced ** 2))
            syllable[:onset] += frication * rms * np.hanning(onset) * fricative[pos:pos + onset]
        out[pos:stop] = syllable
        pos = stop + int(rng.uniform(0.03, 0.12) * rate)

    peak = np.max(np.abs(out))
    return out * (PEAK_LEVEL / peak) if peak > 0 else out


def builtin_utterances(rate: int = DEFAULT_SAMPLE_RATE, speech_dir: Optional[str] = None) -> List[np.ndarray]:
    """Recorded phrases from ``speech_dir`` (``MWF_SPEECH_DIR``) when it holds WAVs, else two synthetic voices."""
    directory = speech_dir or SPEECH_DIR
    paths = sorted(glob.glob(os.path.join(directory, "*.wav")))
    if paths:
        logging.info(f"[run] speech material: {len(paths)} recordings from {directory}")
        return load_utterances(paths, rate)
    logging.debug(f"[run] no recordings in {directory}; synthesizing speech material")
    return [
        synth_utterance(rate, 2.4, f0=120.0, seed=1),
        synth_utterance(rate, 2.0, f0=190.0, seed=2),
    ]


def load_utterances(paths: Sequence[str], rate: int) -> List[np.ndarray]:
    """Mono utterances from WAV files; multichannel files are averaged to one channel."""
    utterances = []
    for path in paths:
        signal = load_wav(path)
        if signal.sample_rate != rate:
            raise ValueError(f"{path}: sample rate {signal.sample_rate} Hz, expected {rate} Hz")
        utterances.append(signal.channels.mean(axis=0))
    if not utterances:
        raise ValueError("no utterance files given")
    return utterances


# --------------------------------------------------------------------------- #
# Programs
# --------------------------------------------------------------------------- #

def _arrange(
    duration_s: float,
    rate: int,
    next_piece: Callable[[str, int], np.ndarray],
    gap_s: float,
    lead_in_s: float,
) -> SpeechProgram:
    n = int(round(duration_s * rate))
    sources = {DRIVER: np.zeros(n), PASSENGER: np.zeros(n)}
    counts = {DRIVER: 0, PASSENGER: 0}
    turns: List[Turn] = []
    start = int(round(lead_in_s * rate))
    label = DRIVER
    while True:
        piece = next_piece(label, counts[label])
        stop = start + len(piece)
        if stop > n:
            break
        sources[label][start:stop] = piece
        turns.append(Turn(label, start / rate, stop / rate))
        counts[label] += 1
        start = stop + int(round(gap_s * rate))
        label = PASSENGER if label == DRIVER else DRIVER

    if min(counts.values()) == 0:
        raise ValueError(f"a {duration_s} s program leaves no room for both talkers")
    logging.debug(f"[run] program of {duration_s} s with {len(turns)} turns")
    return SpeechProgram(sources, rate, turns)


def intermittent_program(
    duration_s: float,
    rate: int = DEFAULT_SAMPLE_RATE,
    utterances: Optional[List[np.ndarray]] = None,
    gap_s: float = 0.5,
    lead_in_s: float = 1.0,
) -> SpeechProgram:
    """Alternate driver and passenger turns, each talker cycling through the same utterances."""
    material = utterances if utterances is not None else builtin_utterances(rate)
    return _arrange(duration_s, rate, lambda _label, i: material[i % len(material)], gap_s, lead_in_s)


def white_burst_program(
    duration_s: float,
    rate: int = DEFAULT_SAMPLE_RATE,
    seed: int = 0,
    burst_s: float = 2.0,
    gap_s: float = 0.5,
    lead_in_s: float = 1.0,
) -> SpeechProgram:
    """Directional white-noise bursts in place of speech."""
    streams = np.random.SeedSequence([BURST_ENTROPY, seed]).spawn(2)
    rngs = {DRIVER: np.random.default_rng(streams[0]), PASSENGER: np.random.default_rng(streams[1])}
    length = int(round(burst_s * rate))
    return _arrange(duration_s, rate, lambda label, _i: rngs[label].standard_normal(length), gap_s, lead_in_s)
