"""Per-frame speaker-activity labels.

Two labelers share the STFT framing: an oracle that looks at the dry
talker signals, and a power-comparison detector that only sees the mics.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from room_sim import DRIVER, PASSENGER
from signal_core import MultichannelSignal, StftConfig

DEFAULT_ENERGY_FLOOR_DB = -45.0


class ActivityLabel(enum.IntEnum):
    SILENCE = 0
    DRIVER_ONLY = 1
    PASSENGER_ONLY = 2
    BOTH = 3


@dataclass
class ActivityTimeline:
    labels: np.ndarray
    cfg: StftConfig

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int8)

    def __len__(self) -> int:
        return len(self.labels)

    def active(self, source: str) -> np.ndarray:
        """Frames where ``source`` talks (alone or in double-talk)."""
        own = ActivityLabel.DRIVER_ONLY if source == DRIVER else ActivityLabel.PASSENGER_ONLY
        return (self.labels == own) | (self.labels == ActivityLabel.BOTH)

    def sample_mask(self, source: str, n_samples: int) -> np.ndarray:
        """Expand frame activity to samples; each sample follows the frame centred nearest to it."""
        hop = self.cfg.hop
        idx = np.clip((np.arange(n_samples) - hop // 2) // hop, 0, len(self.labels) - 1)
        return self.active(source)[idx]

    def counts(self) -> Dict[str, int]:
        return {label.name: int(np.sum(self.labels == label)) for label in ActivityLabel}


def _frame_energy(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = cfg.n_frames(len(x))
    idx = np.arange(n_frames)[:, np.newaxis] * cfg.hop + np.arange(cfg.frame_len)
    return np.sum(np.asarray(x, dtype=np.float64)[idx] ** 2, axis=1)


def _combine(driver: np.ndarray, passenger: np.ndarray) -> np.ndarray:
    labels = np.full(len(driver), ActivityLabel.SILENCE, dtype=np.int8)
    labels[driver & ~passenger] = ActivityLabel.DRIVER_ONLY
    labels[passenger & ~driver] = ActivityLabel.PASSENGER_ONLY
    labels[driver & passenger] = ActivityLabel.BOTH
    return labels


# --------------------------------------------------------------------------- #
# Oracle
# --------------------------------------------------------------------------- #

def oracle_timeline(
    dry_sources: Dict[str, np.ndarray],
    cfg: StftConfig,
    energy_floor_db: float = DEFAULT_ENERGY_FLOOR_DB,
) -> ActivityTimeline:
    """A talker is active in a frame when its dry energy is within ``energy_floor_db`` of its peak frame."""
    flags = {}
    for label in (DRIVER, PASSENGER):
        if label not in dry_sources:
            continue
        energy = _frame_energy(dry_sources[label], cfg)
        peak = energy.max() if energy.size else 0.0
        flags[label] = (energy > peak * 10.0 ** (energy_floor_db / 10.0)) & (energy > 0)

    if not flags:
        raise ValueError(
            f"oracle_timeline needs a {DRIVER!r} or {PASSENGER!r} source, got {sorted(dry_sources)}"
        )
    n_frames = len(next(iter(flags.values())))
    silent = np.zeros(n_frames, dtype=bool)
    timeline = ActivityTimeline(
        _combine(flags.get(DRIVER, silent), flags.get(PASSENGER, silent)), cfg
    )
    logging.debug(f"[activity] oracle {timeline.counts()}")
    return timeline


# --------------------------------------------------------------------------- #
# Power-comparison detector
# --------------------------------------------------------------------------- #

@dataclass
class DetectorThresholds:
    margin_db: float = 0.5
    floor_margin_db: float = 1.5
    smoothing: float = 0.96
    floor_percentile: float = 5.0
    min_run_frames: int = 2


def power_detector(
    mic_signals: MultichannelSignal,
    cfg: StftConfig,
    thresholds: DetectorThresholds = DetectorThresholds(),
) -> ActivityTimeline:
    """Label frames from smoothed mic powers alone.

    Each mic's noise floor is a low percentile of its smoothed power, and a
    frame is active when either mic sits ``floor_margin_db`` above its
    floor.  A run of active frames goes to the mic whose summed excess over
    its floor leads the other by ``margin_db``; shorter runs than
    ``min_run_frames`` stay silent.
    """
    if mic_signals.n_channels != 2:
        raise ValueError(f"power_detector needs two mics, got {mic_signals.n_channels}")

    lam = thresholds.smoothing
    power = np.stack([_frame_energy(ch, cfg) / cfg.frame_len for ch in mic_signals.channels])
    smoothed = np.stack([
        lfilter([1.0 - lam], [1.0, -lam], p, zi=[lam * p[0]])[0] for p in power
    ])
    floor = np.percentile(smoothed, thresholds.floor_percentile, axis=1, keepdims=True)
    excess = np.maximum(smoothed - floor, 0.0)
    active = (excess > floor * (10.0 ** (thresholds.floor_margin_db / 10.0) - 1.0)).any(axis=0)

    lead = 10.0 ** (thresholds.margin_db / 10.0)
    driver = np.zeros(len(active), dtype=bool)
    passenger = np.zeros(len(active), dtype=bool)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], active.astype(np.int8), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        if stop - start < thresholds.min_run_frames:
            continue
        mic1, mic2 = excess[:, start:stop].sum(axis=1)
        if mic1 > mic2 * lead:
            driver[start:stop] = True
        elif mic2 > mic1 * lead:
            passenger[start:stop] = True
    timeline = ActivityTimeline(_combine(driver, passenger), cfg)
    logging.debug(f"[activity] detector {timeline.counts()}")
    return timeline


def timeline_to_csv(timeline: ActivityTimeline, path: str) -> None:
    frame = pd.DataFrame({
        "frame_index": np.arange(len(timeline)),
        "label": [ActivityLabel(v).name for v in timeline.labels],
    })
    frame.to_csv(path, index=False)
