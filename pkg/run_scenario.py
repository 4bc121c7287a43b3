#!/usr/bin/env python3
"""
run_scenario.py
===============

Run the in-car MWF experiments described by a scenario file and write
``metrics.csv``, ``psd_<tag>.dat`` plot data and ``config.resolved``.

Usage
-----

    python run_scenario.py run data/scenarios/noise_colors.json
    python run_scenario.py run data/scenarios/notch.json --out results/notch
    python run_scenario.py run my.json --seed 3 --experiment head

Experiments
-----------
notch  : directional white-noise bursts, MWF at each frame size and
         cross-side attenuation; PSDs and notch depths of the MWF output
         sum and the plain mic sum.
noise  : speech program in colored noise at each input SNR; SNR/SIR
         gains per cell plus one mic-sum baseline row.
head   : driver displaced laterally during an interval, with continuous
         adaptation and with adaptation frozen; gains before, during and
         after the movement.

Environment variables
---------------------
MWF_WORKERS   : sweep cells run concurrently (default 1)
MWF_LOG_LEVEL : logging level name (default INFO)
MWF_LOG_FILE  : append logs to this file instead of stderr
MWF_DATA_DIR  : directory holding the noise envelope tables
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from activity import ActivityTimeline, oracle_timeline
from metrics import (
    NOISE,
    Psd,
    WelchConfig,
    depth_at,
    evaluate_gains,
    long_term_spectrum,
    mic_sum_components,
    mwf_components,
    mwf_paths,
    notch_depths,
    predicted_nulls,
)
from mwf_engine import process_stream
from noise_synth import NoiseColor, NoiseSpec, generate_noise, mix_at_snr
from room_sim import (
    SOURCE_LABELS,
    PositionSchedule,
    Scene,
    ScheduleSegment,
    displaced_scene,
    render_scene,
)
from scenario_config import (
    EXPERIMENT_KINDS,
    HEAD_MOVEMENT,
    NOISE_REDUCTION,
    NOTCH,
    ScenarioConfig,
    parse_scenario,
)
from signal_core import MultichannelSignal
from speech_material import SpeechProgram, intermittent_program, load_utterances, white_burst_program

# --------------------------------------------------------------------------- #
# Configuration
# --------------------------------------------------------------------------- #

WORKERS = int(os.getenv("MWF_WORKERS", "1"))
LOG_LEVEL = os.getenv("MWF_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("MWF_LOG_FILE")

MWF, MIC_SUM = "mwf", "mic_sum"
# Highest frequency at which predicted comb nulls are scored.
NULL_SCORING_MAX_HZ = 4000.0
NULLS_SCORED = 3

COLUMNS = [
    "experiment",
    "cell",
    "output",
    "interval",
    "color",
    "input_snr_db",
    "frame_ms",
    "cross_side_attenuation_db",
    "displacement_m",
    "adaptation_stop_s",
    "snr_gain_driver_db",
    "snr_gain_passenger_db",
    "sir_gain_driver_db",
    "sir_gain_passenger_db",
    "mic_sum_notch_count",
    "mic_sum_max_notch_db",
    "mic_sum_mean_notch_db",
    "mic_sum_null_depth_db",
    "mic_sum_max_null_depth_db",
    "mwf_notch_count",
    "mwf_max_notch_db",
    "mwf_mean_notch_db",
    "mwf_null_depth_db",
    "mwf_max_null_depth_db",
    "noise_scale",
    "seed",
    "config_hash",
    "status",
]


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #

@dataclass
class Cell:
    """One independent run of a sweep."""

    experiment: str
    cell: str
    color: str
    input_snr_db: float
    frame_ms: float
    cross_side_attenuation_db: Optional[float] = None
    displacement_m: Optional[float] = None
    adaptation_stop_s: Optional[float] = None
    baseline: bool = False

    def fields(self) -> Dict[str, Any]:
        out = asdict(self)
        out.pop("baseline")
        return out


@dataclass
class CellResult:
    rows: List[Dict[str, Any]]
    psds: Dict[str, Psd] = field(default_factory=dict)


@dataclass
class RunReport:
    rows: List[Dict[str, Any]]
    psds: Dict[str, Psd]
    seed: int
    config_hash: str
    resolved_config: Dict[str, Any]
    wall_time_s: float = 0.0

    @property
    def failed(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row.get("status") != "ok"]


@dataclass
class Mixture:
    """Mic signals of one cell and their exact decomposition."""

    decomposed: Dict[str, MultichannelSignal]
    mics: MultichannelSignal
    noise_scale: float


# --------------------------------------------------------------------------- #
# Shared pipeline
# --------------------------------------------------------------------------- #

def _speech_program(config: ScenarioConfig, duration_s: float) -> SpeechProgram:
    s = config.speech
    rate = config.scene.sample_rate
    utterances = load_utterances(s.utterances, rate) if s.utterances else None
    return intermittent_program(duration_s, rate, utterances, gap_s=s.gap_s, lead_in_s=s.lead_in_s)


def render_mixture(
    program: SpeechProgram,
    schedule: PositionSchedule,
    timeline: ActivityTimeline,
    color: str,
    input_snr_db: float,
    seed: int,
    cross_side_attenuation_db: Optional[float] = None,
) -> Mixture:
    render = render_scene(program.sources, schedule, cross_side_attenuation_db)
    n, rate = program.n_samples, program.sample_rate
    noise = generate_noise(NoiseSpec(NoiseColor.named(color), seed=seed, channels=2), n, rate)
    masks = {label: timeline.sample_mask(label, n) for label in SOURCE_LABELS}
    scaled, scale = mix_at_snr(render.components, noise, input_snr_db, masks)
    decomposed = dict(render.components)
    decomposed[NOISE] = scaled
    return Mixture(decomposed, render.mics + scaled, scale)


def _static(config: ScenarioConfig, scene: Scene) -> PositionSchedule:
    return PositionSchedule([ScheduleSegment(0.0, scene)], config.scene.crossfade_s)


def _path_delay(scene: Scene) -> float:
    """Cross-side minus same-side direct-path delay for the driver (seconds)."""
    src = scene.sources[scene.source_index(SOURCE_LABELS[0])].position
    same = np.linalg.norm(src - scene.mics[0].position)
    cross = np.linalg.norm(src - scene.mics[1].position)
    return float(cross - same) / scene.speed_of_sound


def _row(cell: Cell, output: str, report_row: Dict[str, Any], **extra: Any) -> Dict[str, Any]:
    row = cell.fields()
    row.update(output=output, interval="all", status="ok")
    row.update(report_row)
    row.update(extra)
    return row


# --------------------------------------------------------------------------- #
# Experiments
# --------------------------------------------------------------------------- #

def _noise_cell(config: ScenarioConfig, cell: Cell, program: SpeechProgram, seed: int) -> CellResult:
    rate = config.scene.sample_rate
    mwf_cfg = config.mwf_config(color=cell.color)
    timeline = oracle_timeline(program.sources, mwf_cfg.stft(rate))
    mix = render_mixture(
        program, _static(config, config.build_scene()), timeline,
        cell.color, cell.input_snr_db, seed, config.scene.cross_side_attenuation_db,
    )
    out = process_stream(mix.mics, timeline, mwf_cfg, component_inputs=mix.decomposed)

    report = evaluate_gains(mix.decomposed, mwf_components(out), timeline, paths=mwf_paths(out))
    rows = [_row(cell, MWF, report.to_row(), noise_scale=mix.noise_scale)]
    if cell.baseline:
        baseline = evaluate_gains(mix.decomposed, mic_sum_components(mix.decomposed), timeline)
        rows.append(_row(cell, MIC_SUM, baseline.to_row(), noise_scale=mix.noise_scale))
    return CellResult(rows)


def _notch_cell(config: ScenarioConfig, cell: Cell, program: SpeechProgram, seed: int) -> CellResult:
    n = config.notch
    rate = config.scene.sample_rate
    scene = config.build_scene()
    mwf_cfg = config.mwf_config(frame_ms=cell.frame_ms)
    timeline = oracle_timeline(program.sources, mwf_cfg.stft(rate))
    mix = render_mixture(
        program, _static(config, scene), timeline,
        cell.color, cell.input_snr_db, seed, cell.cross_side_attenuation_db,
    )
    out = process_stream(mix.mics, timeline, mwf_cfg, component_inputs=mix.decomposed)
    report = evaluate_gains(mix.decomposed, mwf_components(out), timeline, paths=mwf_paths(out))

    skip = int(round(n.psd_skip_s * rate))
    nulls = predicted_nulls(_path_delay(scene), min(NULL_SCORING_MAX_HZ, rate / 2.0))[:NULLS_SCORED]
    psds: Dict[str, Psd] = {}
    extra: Dict[str, Any] = {}
    for output, signal in ((MIC_SUM, mix.mics.mix()), (MWF, out.mixed)):
        psd = long_term_spectrum(signal[skip:], rate, WelchConfig())
        psds[f"{cell.cell}_{output}"] = psd
        report.notch_stats[output] = notch_depths(psd, n.smoothing_octaves)
        at_nulls = depth_at(psd, nulls, n.smoothing_octaves)
        extra[f"{output}_null_depth_db"] = float(np.mean(at_nulls))
        extra[f"{output}_max_null_depth_db"] = float(np.max(at_nulls))
        logging.info(
            f"[metrics] {cell.cell} {output}: {len(report.notch_stats[output])} notches, "
            f"max {report.notch_stats[output].max_depth:.1f} dB"
        )
    return CellResult([_row(cell, MWF, report.to_row(), noise_scale=mix.noise_scale, **extra)], psds)


def _head_cell(config: ScenarioConfig, cell: Cell, program: SpeechProgram, seed: int) -> CellResult:
    h = config.head_movement
    rate = config.scene.sample_rate
    scene = config.build_scene()
    start, end = h.interval_s
    schedule = PositionSchedule(
        [
            ScheduleSegment(0.0, scene),
            ScheduleSegment(start, displaced_scene(scene, cell.displacement_m)),
            ScheduleSegment(end, scene),
        ],
        config.scene.crossfade_s,
    )
    mwf_cfg = config.mwf_config(color=cell.color, adaptation_stop_time=cell.adaptation_stop_s)
    timeline = oracle_timeline(program.sources, mwf_cfg.stft(rate))
    mix = render_mixture(
        program, schedule, timeline, cell.color, cell.input_snr_db, seed,
        config.scene.cross_side_attenuation_db,
    )
    out = process_stream(mix.mics, timeline, mwf_cfg, component_inputs=mix.decomposed)

    intervals = {"pre": (0.0, start), "during": (start, end), "post": (end, program.duration)}
    outputs: List[Tuple[str, Dict[str, np.ndarray], Optional[Dict[str, Dict[str, np.ndarray]]]]] = [
        (MWF, mwf_components(out), mwf_paths(out)),
    ]
    if cell.baseline:
        outputs.append((MIC_SUM, mic_sum_components(mix.decomposed), None))
    rows = []
    for output, decomposed_out, paths in outputs:
        for name, interval in intervals.items():
            report = evaluate_gains(mix.decomposed, decomposed_out, timeline, interval, paths=paths)
            row = _row(cell, output, report.to_row(), noise_scale=mix.noise_scale)
            row["interval"] = f"{name} {interval[0]:g}-{interval[1]:g}s"
            rows.append(row)
    return CellResult(rows)


def _cells(config: ScenarioConfig) -> List[Cell]:
    kind = config.experiment
    if kind == NOTCH:
        return [
            Cell(kind, f"{frame_ms:g}ms_{att:g}db", "white", config.notch.input_snr_db, frame_ms,
                 cross_side_attenuation_db=att)
            for frame_ms in config.notch.frame_ms
            for att in config.notch.cross_side_attenuations_db
        ]
    if kind == NOISE_REDUCTION:
        cells = [
            Cell(kind, f"{color}_{snr:g}db", color, snr, config.mwf.frame_ms,
                 cross_side_attenuation_db=config.scene.cross_side_attenuation_db)
            for color in config.noise.colors
            for snr in config.noise.input_snrs_db
        ]
        cells[0].baseline = True
        return cells
    h = config.head_movement
    return [
        Cell(kind, f"{d:g}m_{'frozen' if stop is not None else 'continuous'}", h.color, h.input_snr_db,
             config.mwf.frame_ms, config.scene.cross_side_attenuation_db, d, stop, baseline=stop is None)
        for d in h.displacements_m
        for stop in (None, h.stop_adaptation_at_s)
    ]


def _program(config: ScenarioConfig, seed: int) -> SpeechProgram:
    rate = config.scene.sample_rate
    if config.experiment == NOTCH:
        n = config.notch
        return white_burst_program(n.duration_s, rate, seed, n.burst_s, config.speech.gap_s, config.speech.lead_in_s)
    if config.experiment == HEAD_MOVEMENT:
        return _speech_program(config, config.head_movement.duration_s)
    return _speech_program(config, config.speech.duration_s)


_RUNNERS: Dict[str, Callable[[ScenarioConfig, Cell, SpeechProgram, int], CellResult]] = {
    NOTCH: _notch_cell,
    NOISE_REDUCTION: _noise_cell,
    HEAD_MOVEMENT: _head_cell,
}


def run_experiment(config: ScenarioConfig, seed: Optional[int] = None) -> RunReport:
    """Run every cell of ``config.experiment``; a failing cell becomes a ``failed`` row."""
    seed = config.noise.seed if seed is None else seed
    config_hash = config.config_hash()
    started = time.perf_counter()
    program = _program(config, seed)
    cells = _cells(config)
    runner = _RUNNERS[config.experiment]
    logging.info(f"[run] {config.experiment}: {len(cells)} cells, seed {seed}, {WORKERS} worker(s)")

    def _run(cell: Cell) -> CellResult:
        t0 = time.perf_counter()
        try:
            result = runner(config, cell, program, seed)
        except Exception as exc:
            logging.error(f"[run] cell {cell.cell} failed: {exc}")
            row = cell.fields()
            row.update(output=MWF, interval="all", status=f"failed: {exc}")
            return CellResult([row])
        logging.info(f"[run] cell {cell.cell} done in {time.perf_counter() - t0:.1f} s")
        return result

    if WORKERS > 1:
        with ThreadPoolExecutor(max_workers=WORKERS) as pool:
            results = list(pool.map(_run, cells))
    else:
        results = [_run(cell) for cell in cells]

    rows: List[Dict[str, Any]] = []
    psds: Dict[str, Psd] = {}
    for result in results:
        for row in result.rows:
            row.update(seed=seed, config_hash=config_hash)
            rows.append(row)
        psds.update(result.psds)

    resolved = config.resolved()
    resolved["seed"] = seed
    return RunReport(rows, psds, seed, config_hash, resolved, time.perf_counter() - started)


# --------------------------------------------------------------------------- #
# Output
# --------------------------------------------------------------------------- #

def emit_report(report: RunReport, out_dir: str) -> List[str]:
    """Write the report files; byte-identical for identical config and seed."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = []

        metrics_path = os.path.join(out_dir, "metrics.csv")
        frame = pd.DataFrame(report.rows).reindex(columns=COLUMNS)
        frame.to_csv(metrics_path, index=False, float_format="%.4f")
        paths.append(metrics_path)

        for tag in sorted(report.psds):
            psd = report.psds[tag]
            path = os.path.join(out_dir, f"psd_{tag}.dat")
            np.savetxt(path, np.column_stack([psd.frequencies, psd.level_db]),
                       fmt=("%.3f", "%.4f"), header="frequency_hz level_db")
            paths.append(path)

        config_path = os.path.join(out_dir, "config.resolved")
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump(report.resolved_config, fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(config_path)
    except OSError as exc:
        raise RuntimeError(f"Cannot write report to {out_dir!r}: {exc}") from exc

    logging.info(f"[run] wrote {len(paths)} files to {out_dir} ({report.wall_time_s:.1f} s)")
    return paths


# --------------------------------------------------------------------------- #
# CLI / main
# --------------------------------------------------------------------------- #

def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="Run in-car MWF experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment a scenario file describes")
    run.add_argument("config", help="scenario JSON file (an empty file means the default cabin)")
    run.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    run.add_argument("--seed", type=int, help="noise seed (overrides noise.seed)")
    run.add_argument("--experiment", choices=EXPERIMENT_KINDS, help="override the experiment kind")
    return ap.parse_args(argv)


def _configure_logging() -> None:
    kwargs: Dict[str, Any] = dict(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO), format="%(message)s")
    if LOG_FILE:
        kwargs.update(filename=LOG_FILE, filemode="a")
    logging.basicConfig(**kwargs)


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    _configure_logging()

    try:
        config = parse_scenario(args.config)
    except (RuntimeError, ValueError) as exc:
        sys.exit(str(exc))
    if args.experiment:
        config = replace(config, experiment=args.experiment)
    out_dir = args.out or config.output_dir

    report = run_experiment(config, seed=args.seed)
    try:
        paths = emit_report(report, out_dir)
    except RuntimeError as exc:
        sys.exit(str(exc))

    failed = report.failed
    for row in failed:
        print(f"✗ {row['cell']}: {row['status']}")
    mark = "✗" if failed else "✓"
    print(f"{mark} {len(report.rows)} rows, {len(paths)} files in {out_dir} ({report.wall_time_s:.1f} s)")
    return 1 if failed else 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        sys.exit(130)
