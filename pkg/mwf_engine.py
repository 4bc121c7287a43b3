"""Adaptive two-microphone multichannel Wiener filter.

Per frequency bin the engine tracks three exponentially weighted
correlation matrices (noise only, driver + noise, passenger + noise),
rebuilds the MWF system from them with the noise statistics subtracted,
and solves a regularized 2x2 problem for each extracted talker:

    R = Phi_A + Phi_B - Phi_noise
    p = column ``ref`` of (Phi_target - Phi_noise)
    w = (R + delta * tr(R) / 2 * I)^-1 p,      s_hat = w^H x

The driver is extracted as heard at mic 1, the passenger as heard at mic 2,
and the two estimates are summed for transmission.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from activity import ActivityLabel, ActivityTimeline
from room_sim import DRIVER, PASSENGER, REFERENCE_MIC
from signal_core import MultichannelSignal, StftConfig, istft_matrix, stft_matrix

DEFAULT_LAMBDA = 0.96
DEFAULT_DELTA = 1.0
DEFAULT_FRAME_MS = 8.0
DEFAULT_WARMUP_FRAMES = 10
# Absolute floor inside tr(R)/2 for the singularity test.
TRACE_EPS = 1e-12
DET_RTOL = 1e-15

NOISE, TARGET_A, TARGET_B = "noise", DRIVER, PASSENGER
_CLASS_OF_LABEL = {
    ActivityLabel.SILENCE: NOISE,
    ActivityLabel.DRIVER_ONLY: TARGET_A,
    ActivityLabel.PASSENGER_ONLY: TARGET_B,
}


# --------------------------------------------------------------------------- #
# Configuration
# --------------------------------------------------------------------------- #

@dataclass
class DeltaBand:
    """Regularization ``delta`` for bins below ``max_frequency`` (Hz)."""

    max_frequency: float
    delta: float

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


def flat_delta(delta: float = DEFAULT_DELTA) -> List[DeltaBand]:
    return [DeltaBand(math.inf, delta)]


def hoth_delta() -> List[DeltaBand]:
    """Heavy loading under 312.5 Hz, where Hoth noise dominates the speech."""
    return [DeltaBand(312.5, 100.0), DeltaBand(math.inf, DEFAULT_DELTA)]


@dataclass
class MwfConfig:
    frame_ms: float = DEFAULT_FRAME_MS
    lam: float = DEFAULT_LAMBDA
    delta_schedule: List[DeltaBand] = field(default_factory=flat_delta)
    warmup_frames: int = DEFAULT_WARMUP_FRAMES
    adaptation_stop_time: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.frame_ms <= 0:
            raise ValueError(f"frame_ms must be positive, got {self.frame_ms}")
        if self.warmup_frames < 0:
            raise ValueError(f"warmup_frames must be >= 0, got {self.warmup_frames}")
        if not self.delta_schedule:
            raise ValueError("delta_schedule needs at least one band")
        edges = [band.max_frequency for band in self.delta_schedule]
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"delta_schedule bands must be sorted by max_frequency, got {edges}")

    def stft(self, sample_rate: int) -> StftConfig:
        return StftConfig.from_frame_ms(self.frame_ms, sample_rate)

    def delta_per_bin(self, freqs: np.ndarray) -> np.ndarray:
        """Step lookup; a bin exactly on a band edge belongs to the band above it."""
        edges = np.array([band.max_frequency for band in self.delta_schedule])
        deltas = np.array([band.delta for band in self.delta_schedule])
        idx = np.searchsorted(edges, freqs, side="right")
        return deltas[np.minimum(idx, len(deltas) - 1)]


# --------------------------------------------------------------------------- #
# State
# --------------------------------------------------------------------------- #

@dataclass
class CorrelationState:
    """Per-bin 2x2 Hermitian statistics for each activity class, shape ``(K, 2, 2)``."""

    phi: Dict[str, np.ndarray]
    counts: Dict[str, int]

    @classmethod
    def zeros(cls, n_bins: int) -> "CorrelationState":
        return cls(
            phi={name: np.zeros((n_bins, 2, 2), dtype=np.complex128) for name in (NOISE, TARGET_A, TARGET_B)},
            counts={NOISE: 0, TARGET_A: 0, TARGET_B: 0},
        )

    @property
    def phi_noise(self) -> np.ndarray:
        return self.phi[NOISE]

    @property
    def phi_a(self) -> np.ndarray:
        return self.phi[TARGET_A]

    @property
    def phi_b(self) -> np.ndarray:
        return self.phi[TARGET_B]

    def copy(self) -> "CorrelationState":
        return CorrelationState({k: v.copy() for k, v in self.phi.items()}, dict(self.counts))


@dataclass
class FilterSet:
    """Per-bin weight vectors, ``(K, 2)`` complex, applied as ``w^H x``."""

    w_a: np.ndarray
    w_b: np.ndarray

    @classmethod
    def zeros(cls, n_bins: int) -> "FilterSet":
        return cls(np.zeros((n_bins, 2), dtype=np.complex128), np.zeros((n_bins, 2), dtype=np.complex128))

    def for_target(self, target: str) -> np.ndarray:
        return self.w_a if target == TARGET_A else self.w_b


@dataclass
class FilteredComponent:
    """One input component after the extraction filters."""

    driver: np.ndarray
    passenger: np.ndarray

    @property
    def mixed(self) -> np.ndarray:
        return self.driver + self.passenger


@dataclass
class MwfOutput:
    s_hat_1a: np.ndarray
    s_hat_2b: np.ndarray
    sample_rate: int
    components: Dict[str, FilteredComponent] = field(default_factory=dict)
    diagnostics: Optional[pd.DataFrame] = None
    mixed: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.mixed = self.s_hat_1a + self.s_hat_2b

    def as_signal(self) -> MultichannelSignal:
        return MultichannelSignal(self.mixed, self.sample_rate)


# --------------------------------------------------------------------------- #
# Per-frame operations
# --------------------------------------------------------------------------- #

def update_statistics(
    state: CorrelationState,
    frame: np.ndarray,
    label: int,
    lam: float = DEFAULT_LAMBDA,
) -> CorrelationState:
    """Fold one ``(2, K)`` spectral frame into the class selected by ``label``.

    Double-talk frames leave every class untouched.
    """
    name = _CLASS_OF_LABEL.get(ActivityLabel(label))
    if name is None:
        return state
    outer = np.einsum("ik,jk->kij", frame, frame.conj())
    phi = state.phi[name]
    phi *= lam
    phi += (1.0 - lam) * outer
    state.counts[name] += 1
    return state


def assemble_system(
    state: CorrelationState,
    bins: int | slice | np.ndarray | None = None,
    target: str = TARGET_A,
    warmup: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Build ``(R, p)`` for ``target`` on the selected bins (all bins by default).

    With ``warmup`` set, a talker class that has fewer updates than that
    enters ``R`` as the noise statistics, so an unheard talker adds no
    speech term and ``R`` keeps its noise floor.
    """
    if target not in (TARGET_A, TARGET_B):
        raise ValueError(f"target must be {TARGET_A!r} or {TARGET_B!r}, got {target!r}")
    sel = slice(None) if bins is None else bins
    noise = state.phi_noise[sel]
    talkers = {
        name: noise if warmup is not None and state.counts[name] < warmup else state.phi[name][sel]
        for name in (TARGET_A, TARGET_B)
    }
    r = talkers[TARGET_A] + talkers[TARGET_B] - noise
    ref = REFERENCE_MIC[target]
    p = talkers[target][..., :, ref] - noise[..., :, ref]

    r = 0.5 * (r + np.conj(np.swapaxes(r, -1, -2)))
    diag = np.maximum(np.real(np.diagonal(r, axis1=-2, axis2=-1)), 0.0)
    r[..., 0, 0] = diag[..., 0]
    r[..., 1, 1] = diag[..., 1]
    return r, p


def solve_filter(r: np.ndarray, p: np.ndarray, delta: float | np.ndarray) -> np.ndarray:
    """Closed-form ``(R + delta tr(R)/2 I)^-1 p``; near-singular systems give ``w = 0``.

    Works on a single system (``(2, 2)``, ``(2,)``) or stacked ones
    (``(..., 2, 2)``, ``(..., 2)``) with ``delta`` broadcast over the stack.
    """
    r = np.asarray(r, dtype=np.complex128)
    p = np.asarray(p, dtype=np.complex128)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta < 0):
        raise ValueError("delta must be non-negative")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
        raise ValueError("solve_filter received non-finite statistics")

    half_trace = 0.5 * np.real(r[..., 0, 0] + r[..., 1, 1])
    loading = delta * half_trace
    a = r[..., 0, 0] + loading
    b = r[..., 0, 1]
    c = r[..., 1, 0]
    d = r[..., 1, 1] + loading
    det = a * d - b * c

    singular = np.abs(det) < DET_RTOL * (half_trace + TRACE_EPS) ** 2
    safe_det = np.where(singular, 1.0, det)
    w0 = (d * p[..., 0] - b * p[..., 1]) / safe_det
    w1 = (a * p[..., 1] - c * p[..., 0]) / safe_det
    w = np.stack([w0, w1], axis=-1)
    w[singular] = 0.0
    return w


def apply_filter(w: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """``w^H x`` per bin for a ``(2, K)`` frame, or per frame and bin for ``(2, M, K)`` input."""
    if frame.ndim == 2:
        return np.einsum("ka,ak->k", w.conj(), frame)
    return np.einsum("mka,amk->mk", w.conj(), frame)


# --------------------------------------------------------------------------- #
# Stream processing
# --------------------------------------------------------------------------- #

class MwfEngine:
    """One sequential stream: statistics, current filters and the per-bin regularization."""

    def __init__(self, cfg: MwfConfig, sample_rate: int) -> None:
        self.cfg = cfg
        self.sample_rate = sample_rate
        self.stft = cfg.stft(sample_rate)
        self.delta = cfg.delta_per_bin(self.stft.bin_frequencies(sample_rate))
        self.state = CorrelationState.zeros(self.stft.n_bins)
        self.filters = FilterSet.zeros(self.stft.n_bins)

    def frame_time(self, m: int) -> float:
        return m * self.stft.hop / self.sample_rate

    def adapting(self, m: int) -> bool:
        stop = self.cfg.adaptation_stop_time
        return stop is None or self.frame_time(m) < stop

    @property
    def warmup(self) -> int:
        return max(self.cfg.warmup_frames, 1)

    def ready(self, target: str) -> bool:
        """The target and the noise have been heard; an unheard competitor stands in as noise."""
        return self.state.counts[target] >= self.warmup and self.state.counts[NOISE] >= self.warmup

    def system(self, target: str, bins: int | slice | None = None) -> tuple[np.ndarray, np.ndarray]:
        return assemble_system(self.state, bins=bins, target=target, warmup=self.warmup)

    def step(self, m: int, frame: np.ndarray, label: int) -> FilterSet:
        """Update (unless frozen), re-solve both filters, and return the filters for frame ``m``."""
        if not self.adapting(m):
            return self.filters
        before = dict(self.state.counts)
        update_statistics(self.state, frame, label, self.cfg.lam)
        if self.state.counts == before:
            return self.filters
        for target in (TARGET_A, TARGET_B):
            if not self.ready(target):
                continue
            r, p = self.system(target)
            self.filters.for_target(target)[:] = solve_filter(r, p, self.delta)
        return self.filters


def process_stream(
    mic_signals: MultichannelSignal,
    timeline: ActivityTimeline,
    cfg: MwfConfig,
    component_inputs: Optional[Dict[str, MultichannelSignal]] = None,
    diagnostic_bins: Sequence[int] = (),
) -> MwfOutput:
    """Run the adaptive MWF over a two-mic recording.

    When ``component_inputs`` is given (clean per-talker mic components and
    the noise at the mics), each one is passed through the same sequence of
    filters so the outputs can be decomposed exactly.
    """
    if mic_signals.n_channels != 2:
        raise ValueError(f"process_stream needs two mic channels, got {mic_signals.n_channels}")
    rate = mic_signals.sample_rate
    engine = MwfEngine(cfg, rate)
    spec = stft_matrix(mic_signals.channels, engine.stft)
    n_frames, n_bins = spec.shape[1], spec.shape[2]
    if len(timeline) != n_frames:
        raise ValueError(f"timeline has {len(timeline)} frames, stream has {n_frames}")

    w_a = np.empty((n_frames, n_bins, 2), dtype=np.complex128)
    w_b = np.empty_like(w_a)
    rows: List[tuple] = []
    for m in range(n_frames):
        filters = engine.step(m, spec[:, m, :], int(timeline.labels[m]))
        w_a[m] = filters.w_a
        w_b[m] = filters.w_b
        for k in diagnostic_bins:
            r, _ = engine.system(TARGET_A, bins=k)
            rows.append((m, k, float(np.linalg.norm(filters.w_a[k])), float(np.linalg.norm(filters.w_b[k])),
                         float(np.real(np.trace(r)))))

    logging.info(
        f"[mwf] {n_frames} frames of {engine.stft.frame_len} samples, "
        f"class counts {engine.state.counts}"
    )

    def _extract(x: np.ndarray) -> FilteredComponent:
        return FilteredComponent(
            driver=istft_matrix(apply_filter(w_a, x), engine.stft, mic_signals.n_samples),
            passenger=istft_matrix(apply_filter(w_b, x), engine.stft, mic_signals.n_samples),
        )

    full = _extract(spec)
    components = {
        name: _extract(stft_matrix(signal.channels, engine.stft))
        for name, signal in (component_inputs or {}).items()
    }
    diagnostics = None
    if diagnostic_bins:
        diagnostics = pd.DataFrame(rows, columns=["frame", "bin", "abs_w_a", "abs_w_b", "trace_r"])
    return MwfOutput(full.driver, full.passenger, rate, components, diagnostics)


def write_diagnostics(output: MwfOutput, path: str) -> None:
    if output.diagnostics is None:
        raise ValueError("no diagnostics were recorded; pass diagnostic_bins to process_stream")
    output.diagnostics.to_csv(path, index=False)
