"""Experiment configuration: JSON documents with default-cabin defaults.

An empty file is a valid config (the simulated car, white/pink/red/
green/Hoth noise at 5 dB, 8 ms frames, lambda 0.96, delta 1.0).  Keys
mirror the dataclass fields below; ``mwf.lambda`` is the one alias.
Unknown keys are rejected and every validation error names the dotted
path of the offending field.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

from mwf_engine import (
    DEFAULT_DELTA,
    DEFAULT_FRAME_MS,
    DEFAULT_LAMBDA,
    DEFAULT_WARMUP_FRAMES,
    DeltaBand,
    MwfConfig,
    flat_delta,
    hoth_delta,
)
from noise_synth import HOTH, NOISE_KINDS
from room_sim import (
    CABIN_DIMS,
    CABIN_RT60,
    DEFAULT_CROSSFADE,
    DEFAULT_IR_LENGTH,
    DRIVER_POSITION,
    PASSENGER_POSITION,
    PRIMARY_MIC,
    SECONDARY_MIC,
    SPEED_OF_SOUND,
    Scene,
    cabin_scene,
)
from signal_core import DEFAULT_SAMPLE_RATE

NOTCH, NOISE_REDUCTION, HEAD_MOVEMENT = "notch", "noise", "head"
EXPERIMENT_KINDS = (NOTCH, NOISE_REDUCTION, HEAD_MOVEMENT)


# --------------------------------------------------------------------------- #
# Settings
# --------------------------------------------------------------------------- #

@dataclass
class PointSettings:
    position: List[float]


@dataclass
class SceneSettings:
    room_dims: List[float] = field(default_factory=lambda: list(CABIN_DIMS))
    rt60: float = CABIN_RT60
    driver: PointSettings = field(default_factory=lambda: PointSettings(list(DRIVER_POSITION)))
    passenger: PointSettings = field(default_factory=lambda: PointSettings(list(PASSENGER_POSITION)))
    primary_mic: PointSettings = field(default_factory=lambda: PointSettings(list(PRIMARY_MIC)))
    secondary_mic: PointSettings = field(default_factory=lambda: PointSettings(list(SECONDARY_MIC)))
    mic_pattern: str = "cardioid"
    sample_rate: int = DEFAULT_SAMPLE_RATE
    ir_length: int = DEFAULT_IR_LENGTH
    speed_of_sound: float = SPEED_OF_SOUND
    reflection_coefficient: Optional[float] = None
    cross_side_attenuation_db: Optional[float] = None
    crossfade_s: float = DEFAULT_CROSSFADE


@dataclass
class SpeechSettings:
    # WAV files to use instead of the built-in utterances.
    utterances: List[str] = field(default_factory=list)
    duration_s: float = 30.0
    gap_s: float = 0.5
    lead_in_s: float = 1.0


@dataclass
class NoiseSettings:
    colors: List[str] = field(default_factory=lambda: list(NOISE_KINDS))
    input_snrs_db: List[float] = field(default_factory=lambda: [5.0])
    seed: int = 0


@dataclass
class BandSettings:
    # ``None`` means no upper limit.
    max_frequency: Optional[float]
    delta: float


@dataclass
class MwfSettings:
    frame_ms: float = DEFAULT_FRAME_MS
    lam: float = field(default=DEFAULT_LAMBDA, metadata={"key": "lambda"})
    delta: float = DEFAULT_DELTA
    delta_schedule: Optional[List[BandSettings]] = None
    hoth_preset: bool = True
    warmup_frames: int = DEFAULT_WARMUP_FRAMES
    adaptation_stop_time: Optional[float] = None


@dataclass
class NotchSettings:
    frame_ms: List[float] = field(default_factory=lambda: [100.0, 20.0, 8.0])
    cross_side_attenuations_db: List[float] = field(default_factory=lambda: [2.0, 10.0])
    duration_s: float = 20.0
    burst_s: float = 2.0
    input_snr_db: float = 30.0
    psd_skip_s: float = 2.0
    smoothing_octaves: float = 1.0


@dataclass
class HeadMovementSettings:
    displacements_m: List[float] = field(default_factory=lambda: [0.10, 0.15])
    interval_s: List[float] = field(default_factory=lambda: [36.0, 52.0])
    duration_s: float = 68.0
    stop_adaptation_at_s: float = 36.0
    color: str = "white"
    input_snr_db: float = 5.0


@dataclass
class ScenarioConfig:
    experiment: str = NOISE_REDUCTION
    scene: SceneSettings = field(default_factory=SceneSettings)
    speech: SpeechSettings = field(default_factory=SpeechSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    mwf: MwfSettings = field(default_factory=MwfSettings)
    notch: NotchSettings = field(default_factory=NotchSettings)
    head_movement: HeadMovementSettings = field(default_factory=HeadMovementSettings)
    output_dir: str = "results"

    # ----- derived objects ----- #

    def build_scene(self, **overrides: Any) -> Scene:
        s = self.scene
        kwargs: Dict[str, Any] = dict(
            room_dims=s.room_dims,
            rt60=s.rt60,
            driver=s.driver.position,
            passenger=s.passenger.position,
            primary_mic=s.primary_mic.position,
            secondary_mic=s.secondary_mic.position,
            pattern=s.mic_pattern,
            sample_rate=s.sample_rate,
            ir_length=s.ir_length,
            speed_of_sound=s.speed_of_sound,
            reflection_coefficient=s.reflection_coefficient,
        )
        kwargs.update(overrides)
        return cabin_scene(**kwargs)

    def mwf_config(
        self,
        color: Optional[str] = None,
        frame_ms: Optional[float] = None,
        adaptation_stop_time: Optional[float] = None,
    ) -> MwfConfig:
        """Engine settings; Hoth cells get the low-band delta preset unless a schedule is given."""
        m = self.mwf
        if m.delta_schedule is not None:
            schedule = [
                DeltaBand(math.inf if b.max_frequency is None else b.max_frequency, b.delta)
                for b in m.delta_schedule
            ]
        elif color == HOTH and m.hoth_preset:
            schedule = hoth_delta()
        else:
            schedule = flat_delta(m.delta)
        stop = adaptation_stop_time if adaptation_stop_time is not None else m.adaptation_stop_time
        return MwfConfig(
            frame_ms=frame_ms if frame_ms is not None else m.frame_ms,
            lam=m.lam,
            delta_schedule=schedule,
            warmup_frames=m.warmup_frames,
            adaptation_stop_time=stop,
        )

    def as_dict(self) -> Dict[str, Any]:
        return _to_plain(self)

    def resolved(self) -> Dict[str, Any]:
        """The effective config plus the sizes and coefficients derived from it."""
        rate = self.scene.sample_rate
        stft = self.mwf_config().stft(rate)
        doc = self.as_dict()
        doc["derived"] = {
            "frame_len": stft.frame_len,
            "hop": stft.hop,
            "fft_len": stft.fft_len,
            "reflection_coefficient": round(self.build_scene().beta, 6),
            "config_hash": self.config_hash(),
        }
        return doc

    def config_hash(self) -> str:
        """SHA-256 prefix over everything except where the results go."""
        doc = self.as_dict()
        doc.pop("output_dir", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------- #
# Dict <-> dataclass
# --------------------------------------------------------------------------- #

def _key(f: Any) -> str:
    return f.metadata.get("key", f.name)


def _join(path: str, key: Any) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _to_plain(obj: Any) -> Any:
    if is_dataclass(obj):
        return {_key(f): _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, list):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        if value is None:
            return None
        inner = [a for a in get_args(tp) if a is not type(None)]
        return _coerce(inner[0], value, path)
    if is_dataclass(tp):
        return _from_dict(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ValueError(f"{path}: expected a list, got {value!r}")
        (item,) = get_args(tp)
        return [_coerce(item, v, _join(path, i)) for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ValueError(f"{path}: expected a string, got {value!r}")
        return value
    raise TypeError(f"{path}: unsupported field type {tp!r}")


def _from_dict(cls: Any, data: Any, path: str) -> Any:
    if not isinstance(data, dict):
        raise ValueError(f"{path or 'config'}: expected an object, got {data!r}")
    hints = get_type_hints(cls)
    known = {_key(f): f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError(f"unknown key {_join(path, unknown[0])!r}")
    kwargs = {f.name: _coerce(hints[f.name], data[key], _join(path, key)) for key, f in known.items() if key in data}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValueError(f"{path or 'config'}: {exc}") from exc


# --------------------------------------------------------------------------- #
# Validation
# --------------------------------------------------------------------------- #

def _check(ok: bool, path: str, message: str) -> None:
    if not ok:
        raise ValueError(f"{path}: {message}")


def _validate_scene(s: SceneSettings) -> None:
    _check(len(s.room_dims) == 3 and all(d > 0 for d in s.room_dims), "scene.room_dims",
           f"expected three positive lengths, got {s.room_dims}")
    _check(s.rt60 > 0, "scene.rt60", f"must be positive, got {s.rt60}")
    _check(s.sample_rate > 0, "scene.sample_rate", f"must be positive, got {s.sample_rate}")
    _check(s.ir_length > 0, "scene.ir_length", f"must be positive, got {s.ir_length}")
    _check(s.mic_pattern in ("omni", "cardioid"), "scene.mic_pattern",
           f"expected 'omni' or 'cardioid', got {s.mic_pattern!r}")
    _check(s.crossfade_s >= 0, "scene.crossfade_s", f"must be non-negative, got {s.crossfade_s}")
    if s.cross_side_attenuation_db is not None:
        _check(s.cross_side_attenuation_db >= 0, "scene.cross_side_attenuation_db",
               f"must be >= 0 dB, got {s.cross_side_attenuation_db}")
    for name in ("driver", "passenger", "primary_mic", "secondary_mic"):
        position = getattr(s, name).position
        path = f"scene.{name}.position"
        _check(len(position) == 3, path, f"expected three coordinates, got {position}")
        for i, (v, d) in enumerate(zip(position, s.room_dims)):
            _check(0.0 < v < d, f"{path}[{i}]", f"{v} m lies outside the room (0, {d})")


def _validate(config: ScenarioConfig) -> None:
    _check(config.experiment in EXPERIMENT_KINDS, "experiment",
           f"expected one of {EXPERIMENT_KINDS}, got {config.experiment!r}")
    _validate_scene(config.scene)

    for i, path in enumerate(config.speech.utterances):
        _check(os.path.isfile(path), f"speech.utterances[{i}]", f"no such file {path!r}")
    _check(config.speech.duration_s > 0, "speech.duration_s", "must be positive")
    _check(config.speech.gap_s >= 0, "speech.gap_s", "must be non-negative")

    _check(bool(config.noise.colors), "noise.colors", "needs at least one color")
    for i, color in enumerate(config.noise.colors):
        _check(color in NOISE_KINDS, f"noise.colors[{i}]", f"expected one of {NOISE_KINDS}, got {color!r}")
    _check(bool(config.noise.input_snrs_db), "noise.input_snrs_db", "needs at least one SNR")

    try:
        config.mwf_config()
        for frame_ms in config.notch.frame_ms:
            config.mwf_config(frame_ms=frame_ms).stft(config.scene.sample_rate)
    except ValueError as exc:
        raise ValueError(f"mwf: {exc}") from exc

    n = config.notch
    _check(bool(n.frame_ms), "notch.frame_ms", "needs at least one frame size")
    _check(all(a >= 0 for a in n.cross_side_attenuations_db), "notch.cross_side_attenuations_db",
           "attenuations must be >= 0 dB")
    _check(n.duration_s - n.psd_skip_s >= 1.0, "notch.psd_skip_s", "leaves less than one second to analyze")

    h = config.head_movement
    _check(len(h.interval_s) == 2 and 0 < h.interval_s[0] < h.interval_s[1] < h.duration_s,
           "head_movement.interval_s", f"expected [start, end] inside (0, {h.duration_s}), got {h.interval_s}")
    _check(h.color in NOISE_KINDS, "head_movement.color", f"expected one of {NOISE_KINDS}, got {h.color!r}")

    try:
        config.build_scene()
    except ValueError as exc:
        raise ValueError(f"scene: {exc}") from exc


def parse_scenario(path: str) -> ScenarioConfig:
    """Read, default-fill and validate a scenario file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise RuntimeError(f"Cannot read scenario {path!r}: {exc}") from exc

    if text.strip():
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    else:
        data = {}

    config = _from_dict(ScenarioConfig, data, "")
    _validate(config)
    logging.info(f"[run] loaded {path} ({config.experiment}, hash {config.config_hash()})")
    return config
