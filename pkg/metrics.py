"""SNR/SIR gains and notch profiling.

Gains are computed from component decompositions: the clean talker and
noise components at the mics (input) and the same components after the
processing under test (output).  The input reference for a talker is its
own-side mic, so plain mic summing shows up as a small negative gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.signal import welch

from activity import ActivityTimeline
from mwf_engine import MwfOutput
from room_sim import DRIVER, PASSENGER, REFERENCE_MIC
from signal_core import MultichannelSignal

NOISE = "noise"
# Gains are pinned to +-60 dB when a measured output component is silent.
SIR_GAIN_CAP_DB = 60.0
GAIN_FLOOR_DB = -SIR_GAIN_CAP_DB
DEFAULT_NOTCH_OCTAVES = 1.0 / 3.0
MIN_NOTCH_DEPTH_DB = 1.0


def _other(source: str) -> str:
    if source not in (DRIVER, PASSENGER):
        raise ValueError(f"source must be {DRIVER!r} or {PASSENGER!r}, got {source!r}")
    return PASSENGER if source == DRIVER else DRIVER


def _window_mask(n_samples: int, rate: int, interval: Optional[Tuple[float, float]]) -> np.ndarray:
    mask = np.ones(n_samples, dtype=bool)
    if interval is not None:
        start, end = (int(round(t * rate)) for t in interval)
        mask[:] = False
        mask[max(start, 0):max(end, 0)] = True
    return mask


def _power(x: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        raise ValueError("no samples selected for the power measurement")
    return float(np.mean(np.asarray(x)[mask] ** 2))


def _ratio_db(num: float, den: float) -> float:
    if num <= 0:
        raise ValueError("target speech power is zero")
    return 10.0 * math.log10(num / den)


def _output_gain(target_out: float, rest_out: float, ratio_in_db: float) -> float:
    """Output ratio minus ``ratio_in_db``, pinned to the gain limits when an output side is silent."""
    if target_out <= 0:
        return GAIN_FLOOR_DB
    if rest_out <= 0:
        return SIR_GAIN_CAP_DB
    gain = 10.0 * math.log10(target_out / rest_out) - ratio_in_db
    return float(np.clip(gain, GAIN_FLOOR_DB, SIR_GAIN_CAP_DB))


# --------------------------------------------------------------------------- #
# Decompositions
# --------------------------------------------------------------------------- #

def mic_sum_components(decomposed_in: Dict[str, MultichannelSignal]) -> Dict[str, np.ndarray]:
    """Components of the plain mic-sum baseline."""
    return {name: sig.mix() for name, sig in decomposed_in.items()}


def mwf_components(output: MwfOutput) -> Dict[str, np.ndarray]:
    """Components of the MWF output sum (shadow-filtered)."""
    return {name: comp.mixed for name, comp in output.components.items()}


def mwf_paths(output: MwfOutput) -> Dict[str, Dict[str, np.ndarray]]:
    """Components as seen through each talker's own extraction filter."""
    return {
        DRIVER: {name: comp.driver for name, comp in output.components.items()},
        PASSENGER: {name: comp.passenger for name, comp in output.components.items()},
    }


# --------------------------------------------------------------------------- #
# Gains
# --------------------------------------------------------------------------- #

def snr_gain(
    decomposed_in: Dict[str, MultichannelSignal],
    decomposed_out: Dict[str, np.ndarray],
    timeline: ActivityTimeline,
    source: str,
    interval: Optional[Tuple[float, float]] = None,
) -> float:
    """Output SNR minus input SNR (dB) over ``source``'s active samples.

    A silent output target reports ``GAIN_FLOOR_DB``; silent output noise
    reports ``SIR_GAIN_CAP_DB``.
    """
    _other(source)
    ref = REFERENCE_MIC[source]
    target_in = decomposed_in[source]
    n, rate = target_in.n_samples, target_in.sample_rate
    mask = timeline.sample_mask(source, n) & _window_mask(n, rate, interval)

    noise_in = _power(decomposed_in[NOISE].channels[ref], mask)
    if noise_in <= 0:
        raise ValueError("noise power is zero; SNR gain is undefined")
    snr_in = _ratio_db(_power(target_in.channels[ref], mask), noise_in)
    return _output_gain(_power(decomposed_out[source], mask), _power(decomposed_out[NOISE], mask), snr_in)


def sir_gain(
    decomposed_in: Dict[str, MultichannelSignal],
    decomposed_out: Dict[str, np.ndarray],
    timeline: ActivityTimeline,
    source: str,
    interval: Optional[Tuple[float, float]] = None,
) -> float:
    """Output SIR minus input SIR (dB).

    Talkers never overlap, so the target is measured over its own active
    samples and the competing talker over the competing talker's.  For the
    MWF, ``decomposed_out`` is the target's own extraction path
    (``mwf_paths``); for the mic-sum baseline it is the sum.  Perfect
    rejection is reported as ``SIR_GAIN_CAP_DB``.
    """
    other = _other(source)
    ref = REFERENCE_MIC[source]
    target_in = decomposed_in[source]
    n, rate = target_in.n_samples, target_in.sample_rate
    window = _window_mask(n, rate, interval)
    own = timeline.sample_mask(source, n) & window
    competing = timeline.sample_mask(other, n) & window

    interference_in = _power(decomposed_in[other].channels[ref], competing)
    if interference_in <= 0:
        raise ValueError("competing talker power is zero; SIR gain is undefined")
    sir_in = _ratio_db(_power(target_in.channels[ref], own), interference_in)
    return _output_gain(_power(decomposed_out[source], own), _power(decomposed_out[other], competing), sir_in)


# --------------------------------------------------------------------------- #
# Spectra and notches
# --------------------------------------------------------------------------- #

@dataclass
class WelchConfig:
    nperseg: int = 4096
    overlap: float = 0.5
    window: str = "hann"


@dataclass
class Psd:
    frequencies: np.ndarray
    level_db: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"frequency_hz": self.frequencies, "level_db": self.level_db})


@dataclass
class NotchProfile:
    frequencies: np.ndarray
    depths_db: np.ndarray

    @property
    def max_depth(self) -> float:
        return float(self.depths_db.max()) if self.depths_db.size else 0.0

    @property
    def mean_depth(self) -> float:
        return float(self.depths_db.mean()) if self.depths_db.size else 0.0

    def __len__(self) -> int:
        return len(self.frequencies)


def long_term_spectrum(signal: np.ndarray, sample_rate: int, welch_config: WelchConfig = WelchConfig()) -> Psd:
    """Welch-averaged one-sided PSD in dB."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("long_term_spectrum expects a single channel")
    if len(x) < sample_rate:
        raise ValueError(f"signal of {len(x)} samples is shorter than one second")
    nperseg = min(welch_config.nperseg, len(x))
    freqs, pxx = welch(
        x,
        fs=sample_rate,
        window=welch_config.window,
        nperseg=nperseg,
        noverlap=int(nperseg * welch_config.overlap),
    )
    tiny = np.finfo(float).tiny
    return Psd(freqs, 10.0 * np.log10(np.maximum(pxx, tiny)))


def depth_curve(psd: Psd, smoothing_octaves: float = DEFAULT_NOTCH_OCTAVES) -> np.ndarray:
    """Fractional-octave moving median of the PSD minus the PSD (dB); zero at DC."""
    freqs, level = psd.frequencies, psd.level_db
    half = 2.0 ** (smoothing_octaves / 2.0)
    lo = np.searchsorted(freqs, freqs / half, side="left")
    hi = np.searchsorted(freqs, freqs * half, side="right")
    envelope = level.copy()
    for i in range(len(freqs)):
        if freqs[i] > 0:
            envelope[i] = np.median(level[lo[i]:hi[i]])
    depth = envelope - level
    depth[freqs <= 0] = 0.0
    return depth


def notch_depths(
    psd: Psd,
    smoothing_octaves: float = DEFAULT_NOTCH_OCTAVES,
    min_depth_db: float = MIN_NOTCH_DEPTH_DB,
) -> NotchProfile:
    """One entry per dip region: the deepest local minimum that falls below the envelope by ``min_depth_db``."""
    depth = depth_curve(psd, smoothing_octaves)
    level = psd.level_db
    local_min = np.zeros(len(level), dtype=bool)
    local_min[1:-1] = (level[1:-1] <= level[:-2]) & (level[1:-1] <= level[2:])

    deep = depth >= min_depth_db
    edges = np.flatnonzero(np.diff(np.concatenate([[0], deep.astype(np.int8), [0]])))
    freqs, depths = [], []
    for start, stop in zip(edges[::2], edges[1::2]):
        candidates = np.flatnonzero(local_min[start:stop]) + start
        if candidates.size == 0:
            continue
        best = candidates[np.argmax(depth[candidates])]
        freqs.append(psd.frequencies[best])
        depths.append(depth[best])
    return NotchProfile(np.asarray(freqs), np.asarray(depths))


def predicted_nulls(delay_seconds: float, max_frequency: float) -> np.ndarray:
    """Nulls of a two-path sum with relative delay ``delay_seconds``: (2m+1)/(2 tau)."""
    if delay_seconds <= 0:
        raise ValueError(f"path delay must be positive, got {delay_seconds}")
    spacing = 1.0 / delay_seconds
    return np.arange(spacing / 2.0, max_frequency, spacing)


def depth_at(
    psd: Psd,
    frequencies: np.ndarray,
    smoothing_octaves: float = DEFAULT_NOTCH_OCTAVES,
    tolerance_bins: int = 2,
) -> np.ndarray:
    """Largest depth within ``tolerance_bins`` of each requested frequency."""
    depth = depth_curve(psd, smoothing_octaves)
    nearest = np.abs(psd.frequencies[:, np.newaxis] - np.asarray(frequencies)[np.newaxis, :]).argmin(axis=0)
    out = np.empty(len(nearest))
    for i, k in enumerate(nearest):
        out[i] = depth[max(k - tolerance_bins, 0):k + tolerance_bins + 1].max()
    return out


# --------------------------------------------------------------------------- #
# Report
# --------------------------------------------------------------------------- #

@dataclass
class MetricsReport:
    snr_gain_driver_db: float
    snr_gain_passenger_db: float
    sir_gain_driver_db: float
    sir_gain_passenger_db: float
    notch_stats: Dict[str, NotchProfile] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)

    def to_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = dict(self.config)
        row.update(
            snr_gain_driver_db=self.snr_gain_driver_db,
            snr_gain_passenger_db=self.snr_gain_passenger_db,
            sir_gain_driver_db=self.sir_gain_driver_db,
            sir_gain_passenger_db=self.sir_gain_passenger_db,
        )
        for tag, profile in self.notch_stats.items():
            row[f"{tag}_notch_count"] = len(profile)
            row[f"{tag}_max_notch_db"] = profile.max_depth
            row[f"{tag}_mean_notch_db"] = profile.mean_depth
        return row


def evaluate_gains(
    decomposed_in: Dict[str, MultichannelSignal],
    decomposed_out: Dict[str, np.ndarray],
    timeline: ActivityTimeline,
    interval: Optional[Tuple[float, float]] = None,
    config: Optional[Dict[str, Any]] = None,
    paths: Optional[Dict[str, Dict[str, np.ndarray]]] = None,
) -> MetricsReport:
    """Score both talkers.

    ``paths`` maps each talker to the components of its own extraction
    filter; when omitted both talkers are read from ``decomposed_out``.
    """
    paths = paths or {DRIVER: decomposed_out, PASSENGER: decomposed_out}
    return MetricsReport(
        snr_gain_driver_db=snr_gain(decomposed_in, paths[DRIVER], timeline, DRIVER, interval),
        snr_gain_passenger_db=snr_gain(decomposed_in, paths[PASSENGER], timeline, PASSENGER, interval),
        sir_gain_driver_db=sir_gain(decomposed_in, paths[DRIVER], timeline, DRIVER, interval),
        sir_gain_passenger_db=sir_gain(decomposed_in, paths[PASSENGER], timeline, PASSENGER, interval),
        config=dict(config or {}),
    )
