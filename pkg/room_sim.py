"""Image-method simulation of a rectangular car cabin.

Paths come from ``rir_generator`` (Allen & Berkley image method with
windowed-sinc fractional delays) with cardioid microphones; the uniform
wall reflection coefficient follows Sabine's formula.  Positions are
``(distance from front, distance from left, height above floor)`` in
meters.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import rir_generator as rg

from signal_core import MultichannelSignal, fft_convolve, save_wav

SPEED_OF_SOUND = 343.0
DEFAULT_IR_LENGTH = 1024
DEFAULT_CROSSFADE = 0.010  # seconds

DRIVER = "driver"
PASSENGER = "passenger"
SOURCE_LABELS = (DRIVER, PASSENGER)
# Each talker's own-side mic: primary for the driver, secondary for the passenger.
REFERENCE_MIC = {DRIVER: 0, PASSENGER: 1}


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #

@dataclass
class Source:
    position: np.ndarray
    label: str

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.label not in SOURCE_LABELS:
            raise ValueError(f"source label must be one of {SOURCE_LABELS}, got {self.label!r}")


@dataclass
class Microphone:
    position: np.ndarray
    orientation: np.ndarray
    pattern: str = "cardioid"

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        self.orientation = np.asarray(self.orientation, dtype=np.float64)
        if self.pattern not in ("omni", "cardioid"):
            raise ValueError(f"mic pattern must be 'omni' or 'cardioid', got {self.pattern!r}")
        if abs(np.linalg.norm(self.orientation) - 1.0) > 1e-9:
            raise ValueError(f"mic orientation {self.orientation.tolist()} is not unit-norm")


@dataclass
class Scene:
    room_dims: np.ndarray
    rt60: float
    sources: List[Source]
    mics: List[Microphone]
    speed_of_sound: float = SPEED_OF_SOUND
    ir_length: int = DEFAULT_IR_LENGTH
    sample_rate: int = 16000
    # Overrides the Sabine-derived wall reflection coefficient when set.
    reflection_coefficient: Optional[float] = None

    def __post_init__(self) -> None:
        self.room_dims = np.asarray(self.room_dims, dtype=np.float64)
        if self.room_dims.shape != (3,) or np.any(self.room_dims <= 0):
            raise ValueError(f"room_dims must be three positive lengths, got {self.room_dims.tolist()}")
        if self.rt60 <= 0:
            raise ValueError(f"rt60 must be positive, got {self.rt60}")
        if self.ir_length <= 0:
            raise ValueError(f"ir_length must be positive, got {self.ir_length}")
        if self.reflection_coefficient is not None and not 0.0 <= self.reflection_coefficient < 1.0:
            raise ValueError(f"reflection_coefficient must lie in [0, 1), got {self.reflection_coefficient}")
        for kind, items in (("source", self.sources), ("mic", self.mics)):
            for i, item in enumerate(items):
                if np.any(item.position <= 0) or np.any(item.position >= self.room_dims):
                    raise ValueError(
                        f"{kind} {i} at {item.position.tolist()} is not strictly inside the room"
                    )

    @property
    def beta(self) -> float:
        if self.reflection_coefficient is not None:
            return self.reflection_coefficient
        return beta_from_rt60(self.room_dims, self.rt60, self.speed_of_sound)

    def source_index(self, label: str) -> int:
        for i, src in enumerate(self.sources):
            if src.label == label:
                return i
        raise ValueError(f"scene has no {label} source")


@dataclass
class ImpulseResponseSet:
    """``ir[source][mic]`` paths, all of one length."""

    ir: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.ir = np.asarray(self.ir, dtype=np.float64)
        if self.ir.ndim != 3:
            raise ValueError(f"ir must be (sources, mics, taps), got shape {self.ir.shape}")
        if not np.all(np.isfinite(self.ir)):
            raise ValueError("impulse responses contain non-finite taps")

    def energy(self, source: int, mic: int) -> float:
        return float(np.sum(self.ir[source, mic] ** 2))


@dataclass
class ScheduleSegment:
    start: float
    scene: Scene


@dataclass
class PositionSchedule:
    segments: List[ScheduleSegment]
    crossfade: float = DEFAULT_CROSSFADE

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        starts = [seg.start for seg in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"schedule segment starts must increase strictly, got {starts}")
        if self.crossfade < 0:
            raise ValueError(f"crossfade must be non-negative, got {self.crossfade}")

    @classmethod
    def static(cls, scene: Scene) -> "PositionSchedule":
        return cls([ScheduleSegment(0.0, scene)])


@dataclass
class SceneRender:
    """Per-source mic components and their sum (both ``(mics, N)``)."""

    components: Dict[str, MultichannelSignal]
    mics: MultichannelSignal = field(init=False)

    def __post_init__(self) -> None:
        parts = list(self.components.values())
        total = parts[0].channels.copy()
        for part in parts[1:]:
            total += part.channels
        self.mics = MultichannelSignal(total, parts[0].sample_rate)


# --------------------------------------------------------------------------- #
# Default cabin
# --------------------------------------------------------------------------- #

CABIN_DIMS = (5.0, 2.0, 1.78)
CABIN_RT60 = 0.07
PRIMARY_MIC = (1.65, 0.6, 1.7)
SECONDARY_MIC = (1.65, 1.4, 1.7)
DRIVER_POSITION = (2.5, 0.6, 0.75)
PASSENGER_POSITION = (2.5, 1.4, 0.75)


def _pointing(frm: Sequence[float], to: Sequence[float]) -> np.ndarray:
    vec = np.asarray(to, dtype=np.float64) - np.asarray(frm, dtype=np.float64)
    return vec / np.linalg.norm(vec)


def cabin_scene(
    *,
    room_dims: Sequence[float] = CABIN_DIMS,
    rt60: float = CABIN_RT60,
    driver: Sequence[float] = DRIVER_POSITION,
    passenger: Sequence[float] = PASSENGER_POSITION,
    primary_mic: Sequence[float] = PRIMARY_MIC,
    secondary_mic: Sequence[float] = SECONDARY_MIC,
    pattern: str = "cardioid",
    sample_rate: int = 16000,
    ir_length: int = DEFAULT_IR_LENGTH,
    speed_of_sound: float = SPEED_OF_SOUND,
    reflection_coefficient: Optional[float] = None,
) -> Scene:
    """Return the default simulated car; each mic points at its own talker."""
    return Scene(
        room_dims=np.asarray(room_dims),
        rt60=rt60,
        sources=[Source(driver, DRIVER), Source(passenger, PASSENGER)],
        mics=[
            Microphone(primary_mic, _pointing(primary_mic, driver), pattern),
            Microphone(secondary_mic, _pointing(secondary_mic, passenger), pattern),
        ],
        speed_of_sound=speed_of_sound,
        ir_length=ir_length,
        sample_rate=sample_rate,
        reflection_coefficient=reflection_coefficient,
    )


def displaced_scene(scene: Scene, lateral_m: float, label: str = DRIVER) -> Scene:
    """Move ``label`` towards the left wall by ``lateral_m``; mics keep their aim."""
    idx = scene.source_index(label)
    sources = list(scene.sources)
    position = sources[idx].position.copy()
    position[1] -= lateral_m
    sources[idx] = Source(position, label)
    return replace(scene, sources=sources)


# --------------------------------------------------------------------------- #
# Image method
# --------------------------------------------------------------------------- #

def beta_from_rt60(room_dims: Sequence[float], rt60: float, speed_of_sound: float = SPEED_OF_SOUND) -> float:
    """Uniform wall reflection coefficient from Sabine's formula."""
    dims = np.asarray(room_dims, dtype=np.float64)
    if rt60 <= 0 or np.any(dims <= 0):
        raise ValueError("rt60 and room dimensions must be positive")
    if math.isinf(rt60):
        return 1.0
    volume = float(np.prod(dims))
    surface = 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2])
    alpha = 24.0 * math.log(10.0) * volume / (speed_of_sound * surface * rt60)
    if alpha >= 1.0:
        raise ValueError(
            f"rt60 = {rt60} s is unachievable for a {dims.tolist()} m room (absorption {alpha:.3f} >= 1)"
        )
    return math.sqrt(1.0 - alpha)


MIC_TYPES = {"omni": rg.mtype.omnidirectional, "cardioid": rg.mtype.cardioid}


def _angles(orientation: np.ndarray) -> List[float]:
    """Unit aim vector as ``[azimuth, elevation]`` in radians."""
    x, y, z = orientation
    return [math.atan2(y, x), math.asin(max(-1.0, min(1.0, z)))]


def generate_rir(scene: Scene, source_idx: int, mic_idx: int) -> np.ndarray:
    """Image-method impulse response from source ``source_idx`` to mic ``mic_idx``."""
    mic = scene.mics[mic_idx]
    h = rg.generate(
        c=scene.speed_of_sound,
        fs=scene.sample_rate,
        r=[mic.position.tolist()],
        s=scene.sources[source_idx].position.tolist(),
        L=scene.room_dims.tolist(),
        beta=[scene.beta] * 6,
        nsample=scene.ir_length,
        mtype=MIC_TYPES[mic.pattern],
        orientation=_angles(mic.orientation),
        hp_filter=False,
    )
    return np.asarray(h, dtype=np.float64)[:, 0]


def cross_side_attenuation(ir_set: ImpulseResponseSet, source: int) -> float:
    """Same-side over cross-side path energy for ``source``, in dB."""
    same = ir_set.energy(source, source)
    cross = ir_set.energy(source, 1 - source)
    if cross == 0.0:
        return math.inf
    return 10.0 * math.log10(same / cross)


def generate_rir_set(scene: Scene, cross_side_attenuation_db: Optional[float] = None) -> ImpulseResponseSet:
    """2x2 paths; optionally rescale cross paths to sit exactly N dB below same-side ones."""
    if len(scene.sources) != 2 or len(scene.mics) != 2:
        raise ValueError("generate_rir_set needs exactly two sources and two mics")
    if cross_side_attenuation_db is not None and cross_side_attenuation_db < 0:
        raise ValueError(f"cross-side attenuation must be >= 0 dB, got {cross_side_attenuation_db}")

    ir = np.stack(
        [np.stack([generate_rir(scene, s, m) for m in range(2)]) for s in range(2)]
    )
    ir_set = ImpulseResponseSet(ir, scene.sample_rate)
    logging.info(
        f"[rir] beta={scene.beta:.3f} natural cross-side attenuation "
        f"driver={cross_side_attenuation(ir_set, 0):.2f} dB "
        f"passenger={cross_side_attenuation(ir_set, 1):.2f} dB"
    )

    if cross_side_attenuation_db is not None:
        for s in range(2):
            same = ir_set.energy(s, s)
            cross = ir_set.energy(s, 1 - s)
            if cross == 0.0:
                raise ValueError(f"source {s} has a silent cross-side path; cannot rescale it")
            target = same * 10.0 ** (-cross_side_attenuation_db / 10.0)
            ir_set.ir[s, 1 - s] *= math.sqrt(target / cross)
    return ir_set


def dump_impulse_responses(ir_set: ImpulseResponseSet, directory: str) -> List[str]:
    """Write each path as ``ir_<source>_mic<k>.wav`` (float) for inspection."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for s, label in enumerate(SOURCE_LABELS[: ir_set.ir.shape[0]]):
        for m in range(ir_set.ir.shape[1]):
            path = os.path.join(directory, f"ir_{label}_mic{m + 1}.wav")
            save_wav(MultichannelSignal(ir_set.ir[s, m], ir_set.sample_rate), path, "FLOAT")
            paths.append(path)
    return paths


# --------------------------------------------------------------------------- #
# Rendering
# --------------------------------------------------------------------------- #

def _segment_weights(schedule: PositionSchedule, n_samples: int, rate: int) -> np.ndarray:
    """Per-segment gains that sum to one; switches ramp linearly over the crossfade."""
    n_seg = len(schedule.segments)
    fade = max(int(round(schedule.crossfade * rate)), 1)
    n = np.arange(n_samples)
    ramps = np.ones((n_seg + 1, n_samples))
    ramps[n_seg] = 0.0
    for k in range(1, n_seg):
        start = int(round(schedule.segments[k].start * rate))
        ramps[k] = np.clip((n - start + 1) / fade, 0.0, 1.0)
    return ramps[:-1] - ramps[1:]


def render_scene(
    dry_sources: Dict[str, np.ndarray],
    schedule: PositionSchedule,
    cross_side_attenuation_db: Optional[float] = None,
) -> SceneRender:
    """Convolve each dry talker with the scheduled IRs; output length matches the input."""
    if schedule.segments[0].start > 0:
        raise ValueError(
            f"schedule gap: first segment starts at {schedule.segments[0].start} s instead of 0"
        )
    first = schedule.segments[0].scene
    rate = first.sample_rate
    lengths = {len(np.asarray(x)) for x in dry_sources.values()}
    if len(lengths) != 1:
        raise ValueError(f"dry sources differ in length: {sorted(lengths)}")
    n_samples = lengths.pop()
    for seg in schedule.segments:
        if seg.scene.sample_rate != rate:
            raise ValueError("all schedule scenes must share one sample rate")
        if seg.start * rate >= n_samples:
            logging.warning(f"[rir] schedule segment at {seg.start} s starts after the signal ends")

    weights = _segment_weights(schedule, n_samples, rate)
    ir_sets = [generate_rir_set(seg.scene, cross_side_attenuation_db) for seg in schedule.segments]

    components: Dict[str, MultichannelSignal] = {}
    for label, dry in dry_sources.items():
        s = first.source_index(label)
        out = np.zeros((len(first.mics), n_samples))
        for k, ir_set in enumerate(ir_sets):
            if not np.any(weights[k]):
                continue
            for m in range(ir_set.ir.shape[1]):
                wet = fft_convolve(np.asarray(dry, dtype=np.float64), ir_set.ir[s, m]).channels[0]
                out[m] += weights[k] * wet[:n_samples]
        components[label] = MultichannelSignal(out, rate)
    return SceneRender(components)
