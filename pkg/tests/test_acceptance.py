"""End-to-end cabin experiments on the simulated car.

These runs take minutes; deselect them with ``-m "not slow"``.
"""

import numpy as np
import pytest

from metrics import depth_at, long_term_spectrum, predicted_nulls
from room_sim import DRIVER, PositionSchedule, generate_rir_set, render_scene, cabin_scene
from run_scenario import MIC_SUM, MWF, _path_delay, run_experiment
from scenario_config import (
    HEAD_MOVEMENT,
    NOISE_REDUCTION,
    NOTCH,
    HeadMovementSettings,
    NoiseSettings,
    NotchSettings,
    ScenarioConfig,
)

pytestmark = pytest.mark.slow

RATE = 16000


def _rows(report, **match):
    return [row for row in report.rows if all(row[k] == v for k, v in match.items())]


def _run(config):
    report = run_experiment(config)
    assert not report.failed
    return report


# ---------------------------------------------------------------------------
# Noise reduction
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def white_sweep():
    return _run(ScenarioConfig(
        experiment=NOISE_REDUCTION, noise=NoiseSettings(colors=["white"], input_snrs_db=[0.0, 5.0, 10.0]),
    ))


@pytest.fixture(scope="module")
def color_sweep():
    return _run(ScenarioConfig(
        experiment=NOISE_REDUCTION, noise=NoiseSettings(colors=["pink", "red", "green", "hoth"]),
    ))


class TestMicSumBaseline:
    def test_white_5db(self, white_sweep):
        (row,) = _rows(white_sweep, cell="white_5db", output=MIC_SUM)
        for talker in ("driver", "passenger"):
            assert row[f"snr_gain_{talker}_db"] == pytest.approx(-1.0, abs=1.0)
            assert row[f"sir_gain_{talker}_db"] == pytest.approx(-1.26, abs=1.0)


class TestNoiseReduction:
    def test_white_5db(self, white_sweep):
        (row,) = _rows(white_sweep, cell="white_5db", output=MWF)
        for talker in ("driver", "passenger"):
            assert 7.0 <= row[f"snr_gain_{talker}_db"] <= 13.0
            assert 5.0 <= row[f"sir_gain_{talker}_db"] <= 11.0

    @pytest.mark.parametrize("color, low, high", [
        ("pink", 3.0, 9.0),
        ("red", 3.0, 9.0),
        ("green", 6.0, 12.0),
    ])
    def test_colored_5db(self, color_sweep, color, low, high):
        (row,) = _rows(color_sweep, cell=f"{color}_5db", output=MWF)
        assert low <= row["snr_gain_driver_db"] <= high

    def test_color_ordering(self, white_sweep, color_sweep):
        gain = {row["color"]: row["snr_gain_driver_db"] for row in _rows(color_sweep, output=MWF)}
        (white,) = _rows(white_sweep, cell="white_5db", output=MWF)
        assert white["snr_gain_driver_db"] > gain["green"]
        assert gain["green"] > max(gain["hoth"], gain["pink"], gain["red"])

    def test_input_snr_trend(self, white_sweep):
        gains = {row["input_snr_db"]: row["snr_gain_driver_db"] for row in _rows(white_sweep, output=MWF)}
        assert gains[0.0] >= gains[5.0] >= gains[10.0]
        for snr, expected in ((0.0, 10.86), (5.0, 10.14), (10.0, 9.05)):
            assert gains[snr] == pytest.approx(expected, abs=3.0)


# ---------------------------------------------------------------------------
# Notches
# ---------------------------------------------------------------------------


class TestNotchPrediction:
    def test_anechoic_mic_sum_nulls(self):
        scene = cabin_scene(reflection_coefficient=0.0)
        nulls = predicted_nulls(_path_delay(scene), 4000.0)
        assert nulls[0] == pytest.approx(745.0, abs=1.0)
        assert nulls[1] - nulls[0] == pytest.approx(1490.0, rel=0.05)

        ir = generate_rir_set(scene).ir
        n_fft = 4096
        response = 20 * np.log10(np.abs(np.fft.rfft(ir[0, 0] + ir[0, 1], n=n_fft)) + 1e-12)
        freqs = np.fft.rfftfreq(n_fft, 1.0 / RATE)
        found = []
        for f0 in nulls[:2]:
            window = np.flatnonzero(np.abs(freqs - f0) < 150.0)
            found.append(freqs[window[np.argmin(response[window])]])
        assert abs(found[0] - 745.0) <= RATE / n_fft + 1.0
        assert found[1] - found[0] == pytest.approx(1490.0, rel=0.05)

    def test_anechoic_psd_depths(self):
        scene = cabin_scene(reflection_coefficient=0.0)
        rng = np.random.default_rng(0)
        render = render_scene({DRIVER: rng.standard_normal(12 * RATE)}, PositionSchedule.static(scene))
        psd = long_term_spectrum(render.mics.mix()[RATE:], RATE)
        depths = depth_at(psd, predicted_nulls(_path_delay(scene), 4000.0)[:3], smoothing_octaves=1.0)
        assert np.all(depths > 6.0)


@pytest.fixture(scope="module")
def notch_sweep():
    return _run(ScenarioConfig(experiment=NOTCH, notch=NotchSettings(frame_ms=[100.0, 8.0])))


class TestNotchMitigation:
    def test_long_frames_remove_notches(self, notch_sweep):
        (row,) = _rows(notch_sweep, cell="100ms_2db")
        assert row["mwf_max_null_depth_db"] < 3.0
        assert row["mic_sum_max_null_depth_db"] > 6.0

    def test_short_frames_shallower_at_every_null(self, notch_sweep):
        settings = NotchSettings()
        nulls = predicted_nulls(_path_delay(cabin_scene()), 4000.0)[:3]
        mwf = depth_at(notch_sweep.psds["8ms_2db_mwf"], nulls, settings.smoothing_octaves)
        mic_sum = depth_at(notch_sweep.psds["8ms_2db_mic_sum"], nulls, settings.smoothing_octaves)
        assert np.all(mwf < mic_sum)

    @pytest.mark.parametrize("frame_ms", ["100ms", "8ms"])
    def test_strong_cross_attenuation_has_no_notches(self, notch_sweep, frame_ms):
        (row,) = _rows(notch_sweep, cell=f"{frame_ms}_10db")
        assert row["mic_sum_max_null_depth_db"] < 3.0
        assert row["mwf_max_null_depth_db"] < 3.0

    def test_psds_written_per_output(self, notch_sweep):
        assert len(notch_sweep.psds) == 8


# ---------------------------------------------------------------------------
# Head movement
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def head_sweep():
    return _run(ScenarioConfig(experiment=HEAD_MOVEMENT, head_movement=HeadMovementSettings()))


def _gain(report, cell, interval):
    rows = [row for row in _rows(report, cell=cell, output=MWF) if row["interval"].startswith(interval)]
    return rows[0]["snr_gain_driver_db"]


class TestHeadMovement:
    @pytest.mark.parametrize("displacement", ["0.1m", "0.15m"])
    def test_continuous_adaptation_tracks(self, head_sweep, displacement):
        pre = _gain(head_sweep, f"{displacement}_continuous", "pre")
        during = _gain(head_sweep, f"{displacement}_continuous", "during")
        assert pre > 0.0
        assert during >= pre - 1.0

    @pytest.mark.parametrize("displacement", ["0.1m", "0.15m"])
    def test_frozen_filter_falls_behind(self, head_sweep, displacement):
        continuous = _gain(head_sweep, f"{displacement}_continuous", "post")
        frozen = _gain(head_sweep, f"{displacement}_frozen", "post")
        assert frozen <= continuous - 1.0

    def test_frozen_matches_before_stop(self, head_sweep):
        continuous = _gain(head_sweep, "0.15m_continuous", "pre")
        frozen = _gain(head_sweep, "0.15m_frozen", "pre")
        assert frozen == pytest.approx(continuous, abs=1e-9)
