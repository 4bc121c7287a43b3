"""Tests for speech_material (synthetic utterances and turn programs)."""

import numpy as np
import pytest

import speech_material
from noise_synth import NoiseColor, NoiseSpec, WHITE, generate_noise
from room_sim import DRIVER, PASSENGER
from signal_core import MultichannelSignal, save_wav
from speech_material import (
    PEAK_LEVEL,
    builtin_utterances,
    intermittent_program,
    load_utterances,
    synth_utterance,
    white_burst_program,
)

RATE = 16000


class TestUtterances:
    def test_peak_and_length(self):
        x = synth_utterance(RATE, 1.5, seed=3)
        assert len(x) == 24000
        assert np.max(np.abs(x)) == pytest.approx(PEAK_LEVEL)

    def test_deterministic(self):
        np.testing.assert_array_equal(synth_utterance(RATE, 1.0, seed=4), synth_utterance(RATE, 1.0, seed=4))

    def test_has_pauses(self):
        x = synth_utterance(RATE, 2.0, seed=5)
        # Leading 50 ms before the first syllable.
        np.testing.assert_array_equal(x[:int(0.05 * RATE)], 0.0)

    def test_builtin_voices(self):
        low, high = builtin_utterances(RATE)
        assert (len(low), len(high)) == (int(2.4 * RATE), int(2.0 * RATE))

    def test_speech_like_spectral_balance(self):
        x = np.concatenate(builtin_utterances(RATE))
        power = np.abs(np.fft.rfft(x)) ** 2
        freqs = np.fft.rfftfreq(len(x), d=1.0 / RATE)
        total = power.sum()
        assert power[freqs < 1000.0].sum() / total > 0.6
        assert power[freqs > 4000.0].sum() / total < 0.05

    def test_vowels_color_the_syllables(self):
        a = synth_utterance(RATE, 2.0, seed=6)
        b = synth_utterance(RATE, 2.0, seed=7)
        assert not np.allclose(a, b)

    def test_recordings_take_precedence(self, tmp_path, monkeypatch):
        for i, length in enumerate((1200, 1600)):
            save_wav(MultichannelSignal(np.full(length, 0.1 * (i + 1)), RATE), str(tmp_path / f"{i:02d}.wav"))
        monkeypatch.setattr(speech_material, "SPEECH_DIR", str(tmp_path))
        first, second = builtin_utterances(RATE)
        assert (len(first), len(second)) == (1200, 1600)
        assert first[0] == pytest.approx(0.1, abs=1e-4)

    def test_empty_speech_dir_synthesizes(self, tmp_path):
        low, _ = builtin_utterances(RATE, speech_dir=str(tmp_path))
        assert len(low) == int(2.4 * RATE)

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError, match="positive"):
            synth_utterance(RATE, 0.0)

    def test_load_from_wav(self, tmp_path):
        path = tmp_path / "u.wav"
        save_wav(MultichannelSignal(np.full((2, 800), 0.25), RATE), str(path))
        (u,) = load_utterances([str(path)], RATE)
        assert u.shape == (800,)
        assert u[0] == pytest.approx(0.25, abs=1e-4)

    def test_load_rate_mismatch(self, tmp_path):
        path = tmp_path / "u.wav"
        save_wav(MultichannelSignal(np.zeros(800), 8000), str(path))
        with pytest.raises(ValueError, match="expected 16000 Hz"):
            load_utterances([str(path)], RATE)

    def test_load_nothing(self):
        with pytest.raises(ValueError, match="no utterance files"):
            load_utterances([], RATE)


class TestPrograms:
    def test_turns_alternate_without_overlap(self):
        program = intermittent_program(12.0, RATE)
        labels = [t.label for t in program.turns]
        assert labels == [DRIVER, PASSENGER, DRIVER, PASSENGER]
        assert program.turns[0].start == pytest.approx(1.0)
        for a, b in zip(program.turns, program.turns[1:]):
            assert b.start - a.end == pytest.approx(0.5)
        overlap = (program.sources[DRIVER] != 0) & (program.sources[PASSENGER] != 0)
        assert not overlap.any()

    def test_equal_lengths(self):
        program = intermittent_program(7.0, RATE)
        assert len(program.sources[DRIVER]) == len(program.sources[PASSENGER]) == 7 * RATE
        assert program.duration == pytest.approx(7.0)

    def test_intervals(self):
        program = intermittent_program(12.0, RATE)
        assert program.intervals(PASSENGER)[0] == pytest.approx((3.9, 6.3))

    def test_too_short(self):
        with pytest.raises(ValueError, match="no room for both talkers"):
            intermittent_program(3.0, RATE)

    def test_white_bursts(self):
        program = white_burst_program(8.0, RATE, seed=0)
        assert [round(t.end - t.start, 6) for t in program.turns] == [2.0, 2.0, 2.0]
        burst = program.sources[DRIVER][RATE:3 * RATE]
        assert np.std(burst) == pytest.approx(1.0, rel=0.05)

    def test_bursts_independent_of_noise_seed(self):
        program = white_burst_program(8.0, RATE, seed=0)
        noise = generate_noise(NoiseSpec(NoiseColor(WHITE), seed=0), 2 * RATE, RATE).channels[0]
        burst = program.sources[DRIVER][RATE:3 * RATE]
        assert abs(np.corrcoef(burst, noise)[0, 1]) < 0.05
