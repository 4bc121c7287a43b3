"""Sample-domain and spectral-domain plumbing.

Audio lives in :class:`MultichannelSignal` (``channels`` is a ``(C, N)``
float64 array).  Framing follows a Hann analysis window at 50% overlap with
no synthesis window, so plain overlap-add of unmodified frames gives the
input back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np
import soundfile as sf
from scipy.signal import fftconvolve, get_window

DEFAULT_SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0
SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #

@dataclass
class MultichannelSignal:
    """Per-channel sample sequences at a fixed rate."""

    channels: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        data = np.asarray(self.channels, dtype=np.float64)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise ValueError(f"channels must be 1-D or 2-D, got shape {data.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.channels = data

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, idx: int) -> np.ndarray:
        return self.channels[idx]

    def mix(self) -> np.ndarray:
        """Return the plain sum of all channels."""
        return self.channels.sum(axis=0)

    def __add__(self, other: "MultichannelSignal") -> "MultichannelSignal":
        if other.sample_rate != self.sample_rate or other.channels.shape != self.channels.shape:
            raise ValueError("signals must share rate and shape to be added")
        return MultichannelSignal(self.channels + other.channels, self.sample_rate)

    def scaled(self, gain: float) -> "MultichannelSignal":
        return MultichannelSignal(self.channels * gain, self.sample_rate)


@dataclass
class StftConfig:
    """Framing for the OLA filter bank: hop is always half the frame."""

    frame_len: int
    fft_len: int
    window: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.frame_len < 2 or self.frame_len % 2:
            raise ValueError(f"frame_len must be even and >= 2, got {self.frame_len}")
        if self.fft_len < self.frame_len:
            raise ValueError(f"fft_len {self.fft_len} shorter than frame_len {self.frame_len}")
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (self.frame_len,):
            raise ValueError("window length must equal frame_len")
        gain = cola_gain(self.window, self.hop)
        if gain <= 0:
            raise ValueError("window does not overlap-add to a positive constant")
        ripple = np.ptp(_overlap_sum(self.window, self.hop)) / gain
        if ripple > 1e-6:
            raise ValueError(f"window is not COLA at hop {self.hop} (ripple {ripple:.2e})")

    @property
    def hop(self) -> int:
        return self.frame_len // 2

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def bin_frequencies(self, sample_rate: int) -> np.ndarray:
        return np.fft.rfftfreq(self.fft_len, d=1.0 / sample_rate)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1

    @classmethod
    def hann(cls, frame_len: int, fft_len: int | None = None) -> "StftConfig":
        """Periodic Hann window, fft_len defaulting to the next power of two."""
        if fft_len is None:
            fft_len = next_pow2(frame_len)
        return cls(frame_len=frame_len, fft_len=fft_len, window=get_window("hann", frame_len))

    @classmethod
    def rectangular(cls, frame_len: int, fft_len: int | None = None) -> "StftConfig":
        if fft_len is None:
            fft_len = next_pow2(frame_len)
        return cls(frame_len=frame_len, fft_len=fft_len, window=np.ones(frame_len))

    @classmethod
    def from_frame_ms(cls, frame_ms: float, sample_rate: int) -> "StftConfig":
        """8 ms @ 16 kHz -> 128/128, 20 ms -> 320/512, 100 ms -> 1600/2048."""
        frame_len = int(round(frame_ms * sample_rate / 1000.0))
        frame_len += frame_len % 2
        return cls.hann(max(frame_len, 2))


@dataclass
class SpectralFrame:
    """One-sided spectra of all channels for frame ``index``."""

    bins: np.ndarray
    index: int


# --------------------------------------------------------------------------- #
# Helpers
# --------------------------------------------------------------------------- #

def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def _overlap_sum(window: np.ndarray, hop: int) -> np.ndarray:
    """Steady-state sum of ``window`` shifted by multiples of ``hop`` (one hop period)."""
    total = np.zeros(hop)
    for start in range(0, len(window), hop):
        chunk = window[start:start + hop]
        total[: len(chunk)] += chunk
    return total


def cola_gain(window: np.ndarray, hop: int) -> float:
    return float(np.mean(_overlap_sum(window, hop)))


# --------------------------------------------------------------------------- #
# WAV I/O
# --------------------------------------------------------------------------- #

def load_wav(path: str) -> MultichannelSignal:
    """Read a PCM16 or float32 WAV into a float64 signal in [-1, 1]."""
    try:
        info = sf.info(path)
    except Exception as exc:
        raise RuntimeError(f"Cannot read WAV file {path!r}: {exc}") from exc
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise RuntimeError(
            f"Unsupported WAV encoding {info.subtype!r} in {path!r}; expected PCM_16 or FLOAT"
        )
    data, rate = sf.read(path, dtype="float64", always_2d=True)
    return MultichannelSignal(data.T, int(rate))


def save_wav(signal: MultichannelSignal, path: str, encoding: str = "PCM_16") -> int:
    """Write ``signal`` and return the number of clipped samples."""
    if signal.n_samples == 0:
        raise ValueError("cannot write an empty signal")
    if encoding not in SUPPORTED_SUBTYPES:
        raise ValueError(f"encoding must be one of {SUPPORTED_SUBTYPES}, got {encoding!r}")

    data = signal.channels
    if encoding == "PCM_16":
        clipped = int(np.count_nonzero(np.abs(data) > 1.0))
        codes = np.round(data * PCM16_SCALE)
        payload = np.clip(codes, -32768, 32767).astype(np.int16)
    else:
        clipped = int(np.count_nonzero(np.abs(data) > 1.0))
        payload = np.clip(data, -1.0, 1.0).astype(np.float32)

    if clipped:
        logging.warning(f"[wav] {clipped} samples clipped while writing {path}")
    try:
        sf.write(path, payload.T, signal.sample_rate, subtype=encoding)
    except Exception as exc:
        raise RuntimeError(f"Cannot write WAV file {path!r}: {exc}") from exc
    return clipped


# --------------------------------------------------------------------------- #
# STFT / OLA
# --------------------------------------------------------------------------- #

def stft_matrix(channels: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Return the ``(C, M, K)`` one-sided spectra of ``(C, N)`` samples."""
    channels = np.atleast_2d(np.asarray(channels, dtype=np.float64))
    n_frames = cfg.n_frames(channels.shape[1])
    if n_frames == 0:
        raise ValueError(
            f"signal of {channels.shape[1]} samples is shorter than one frame ({cfg.frame_len})"
        )
    starts = np.arange(n_frames) * cfg.hop
    idx = starts[:, np.newaxis] + np.arange(cfg.frame_len)
    frames = channels[:, idx] * cfg.window
    spec = np.fft.rfft(frames, n=cfg.fft_len, axis=-1)
    spec[..., 0] = spec[..., 0].real
    spec[..., -1] = spec[..., -1].real
    return spec


def istft_matrix(spec: np.ndarray, cfg: StftConfig, length: int | None = None) -> np.ndarray:
    """Overlap-add ``(C, M, K)`` (or ``(M, K)``) spectra back to samples."""
    spec = np.asarray(spec)
    squeeze = spec.ndim == 2
    if squeeze:
        spec = spec[np.newaxis]
    if spec.shape[-1] != cfg.n_bins:
        raise ValueError(f"frames carry {spec.shape[-1]} bins, config expects {cfg.n_bins}")

    n_ch, n_frames, _ = spec.shape
    spec = spec.copy()
    spec[..., 0] = spec[..., 0].real
    spec[..., -1] = spec[..., -1].real
    blocks = np.fft.irfft(spec, n=cfg.fft_len, axis=-1)

    total = (n_frames - 1) * cfg.hop + cfg.fft_len
    out = np.zeros((n_ch, total))
    for m in range(n_frames):
        start = m * cfg.hop
        out[:, start:start + cfg.fft_len] += blocks[:, m]
    out /= cola_gain(cfg.window, cfg.hop)

    if length is None:
        length = (n_frames - 1) * cfg.hop + cfg.frame_len
    if length > total:
        out = np.pad(out, ((0, 0), (0, length - total)))
    out = out[:, :length]
    return out[0] if squeeze else out


def stft_analyze(signal: MultichannelSignal, cfg: StftConfig) -> List[SpectralFrame]:
    spec = stft_matrix(signal.channels, cfg)
    return [SpectralFrame(bins=spec[:, m, :], index=m) for m in range(spec.shape[1])]


def istft_synthesize(
    frames: Sequence[SpectralFrame],
    cfg: StftConfig,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    length: int | None = None,
) -> MultichannelSignal:
    if not frames:
        raise ValueError("no frames to synthesize")
    shapes = {f.bins.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent frame sizes: {sorted(shapes)}")
    ordered = sorted(frames, key=lambda f: f.index)
    spec = np.stack([f.bins for f in ordered], axis=1)
    return MultichannelSignal(istft_matrix(spec, cfg, length), sample_rate)


# --------------------------------------------------------------------------- #
# Convolution
# --------------------------------------------------------------------------- #

def fft_convolve(
    signal: Union[MultichannelSignal, np.ndarray],
    impulse_response: np.ndarray,
) -> MultichannelSignal:
    """Full linear convolution of every channel with ``impulse_response``."""
    if isinstance(signal, MultichannelSignal):
        data, rate = signal.channels, signal.sample_rate
    else:
        data, rate = np.atleast_2d(np.asarray(signal, dtype=np.float64)), DEFAULT_SAMPLE_RATE
    h = np.asarray(impulse_response, dtype=np.float64)
    if data.shape[1] == 0 or h.size == 0:
        raise ValueError("fft_convolve needs non-empty signal and impulse response")
    return MultichannelSignal(fftconvolve(data, h[np.newaxis, :], axes=-1), rate)
