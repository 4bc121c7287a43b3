"""Tests for room_sim (image method, cross-side scaling, rendering)."""

import math
import os

import numpy as np
import pytest

from room_sim import (
    DRIVER,
    PASSENGER,
    Microphone,
    PositionSchedule,
    Scene,
    ScheduleSegment,
    Source,
    beta_from_rt60,
    cross_side_attenuation,
    displaced_scene,
    dump_impulse_responses,
    generate_rir,
    generate_rir_set,
    render_scene,
    cabin_scene,
)
from signal_core import load_wav

C = 343.0
RATE = 16000


def _free_field(orientation, distance_taps=50, pattern="cardioid"):
    d = distance_taps * C / RATE
    mic = Microphone([1.0, 1.5, 1.5], np.asarray(orientation, dtype=float), pattern)
    src = Source([1.0 + d, 1.5, 1.5], DRIVER)
    scene = Scene(np.array([5.0, 3.0, 3.0]), 0.5, [src], [mic], reflection_coefficient=0.0)
    return scene, d


# ---------------------------------------------------------------------------
# Sabine calibration
# ---------------------------------------------------------------------------


class TestBetaFromRt60:
    def test_default_cabin(self):
        beta = beta_from_rt60((5.0, 2.0, 1.78), 0.07)
        alpha = 1.0 - beta ** 2
        assert alpha == pytest.approx(0.912, abs=0.002)
        assert beta == pytest.approx(0.297, abs=0.002)

    def test_lossless_limit(self):
        assert beta_from_rt60((5.0, 2.0, 1.78), math.inf) == 1.0
        assert beta_from_rt60((5.0, 2.0, 1.78), 1e6) == pytest.approx(1.0, abs=1e-5)

    def test_unachievable_rt60(self):
        with pytest.raises(ValueError, match="unachievable"):
            beta_from_rt60((5.0, 2.0, 1.78), 0.01)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="positive"):
            beta_from_rt60((5.0, 2.0, 1.78), 0.0)


# ---------------------------------------------------------------------------
# Scene validation
# ---------------------------------------------------------------------------


class TestScene:
    def test_source_outside_room(self):
        with pytest.raises(ValueError, match="not strictly inside"):
            cabin_scene(driver=(2.5, 2.5, 0.75))

    def test_non_unit_orientation(self):
        with pytest.raises(ValueError, match="unit-norm"):
            Microphone([1.0, 1.0, 1.0], [1.0, 1.0, 0.0])

    def test_mics_point_at_own_talker(self):
        scene = cabin_scene()
        for mic, src in zip(scene.mics, scene.sources):
            aim = (src.position - mic.position) / np.linalg.norm(src.position - mic.position)
            np.testing.assert_allclose(mic.orientation, aim, atol=1e-12)

    def test_displaced_scene_moves_driver_only(self):
        scene = cabin_scene()
        moved = displaced_scene(scene, 0.15)
        assert moved.sources[0].position[1] == pytest.approx(0.45)
        np.testing.assert_array_equal(moved.sources[1].position, scene.sources[1].position)
        np.testing.assert_array_equal(moved.mics[0].orientation, scene.mics[0].orientation)

    def test_beta_override(self):
        assert cabin_scene(reflection_coefficient=0.0).beta == 0.0
        assert cabin_scene().beta == pytest.approx(0.297, abs=0.002)


# ---------------------------------------------------------------------------
# Image method
# ---------------------------------------------------------------------------


class TestGenerateRir:
    def test_anechoic_on_axis_single_peak(self):
        scene, d = _free_field([1.0, 0.0, 0.0])
        h = generate_rir(scene, 0, 0)
        assert len(h) == scene.ir_length
        assert np.argmax(np.abs(h)) == 50
        assert h[50] == pytest.approx(1.0 / (4 * math.pi * d), rel=1e-6)

    def test_anechoic_single_region(self):
        scene, _ = _free_field([1.0, 0.0, 0.0])
        nonzero = np.flatnonzero(np.abs(generate_rir(scene, 0, 0)) > 1e-12)
        # One windowed-sinc kernel around the direct path.
        assert nonzero.min() >= 50 - 64 and nonzero.max() <= 50 + 64

    def test_cardioid_rear_null(self):
        scene, _ = _free_field([-1.0, 0.0, 0.0])
        np.testing.assert_allclose(generate_rir(scene, 0, 0), 0.0, atol=1e-15)

    @pytest.mark.parametrize("orientation, gain", [
        ([0.0, 1.0, 0.0], 0.5),
        ([1.0, 0.0, 1.0], 0.5 + 0.5 * math.cos(math.pi / 4)),
        ([0.0, 0.0, -1.0], 0.5),
    ])
    def test_cardioid_off_axis_gain(self, orientation, gain):
        aim = np.asarray(orientation) / np.linalg.norm(orientation)
        scene, d = _free_field(aim)
        h = generate_rir(scene, 0, 0)
        assert h[50] == pytest.approx(gain / (4 * math.pi * d), rel=1e-6)

    def test_omni_ignores_orientation(self):
        front, _ = _free_field([1.0, 0.0, 0.0], pattern="omni")
        back, _ = _free_field([-1.0, 0.0, 0.0], pattern="omni")
        np.testing.assert_allclose(generate_rir(front, 0, 0), generate_rir(back, 0, 0))

    def test_energy_grows_with_beta(self):
        energies = []
        for beta in (0.0, 0.2, 0.4, 0.6):
            h = generate_rir(cabin_scene(reflection_coefficient=beta), 0, 0)
            energies.append(np.sum(h ** 2))
        assert all(b > a for a, b in zip(energies, energies[1:]))

    def test_direct_path_delay_difference(self):
        scene = cabin_scene(reflection_coefficient=0.0)
        src = scene.sources[0].position
        same = np.linalg.norm(src - scene.mics[0].position)
        cross = np.linalg.norm(src - scene.mics[1].position)
        assert same == pytest.approx(1.2748, abs=1e-3)
        assert cross == pytest.approx(1.505, abs=1e-3)
        assert (cross - same) / C == pytest.approx(0.671e-3, abs=2e-6)

        lag = np.argmax(np.abs(generate_rir(scene, 0, 1))) - np.argmax(np.abs(generate_rir(scene, 0, 0)))
        assert abs(lag - (cross - same) / C * RATE) <= 1.0


class TestGenerateRirSet:
    def test_natural_cross_side_attenuation(self):
        ir_set = generate_rir_set(cabin_scene())
        for s in (0, 1):
            assert 1.0 <= cross_side_attenuation(ir_set, s) <= 3.0

    def test_symmetric_scene(self):
        ir_set = generate_rir_set(cabin_scene())
        assert ir_set.energy(0, 0) == pytest.approx(ir_set.energy(1, 1), rel=1e-6)
        assert ir_set.energy(0, 1) == pytest.approx(ir_set.energy(1, 0), rel=1e-6)

    def test_forced_attenuation(self):
        ir_set = generate_rir_set(cabin_scene(), cross_side_attenuation_db=10.0)
        for s in (0, 1):
            assert cross_side_attenuation(ir_set, s) == pytest.approx(10.0, abs=1e-9)

    def test_negative_attenuation_rejected(self):
        with pytest.raises(ValueError, match=">= 0 dB"):
            generate_rir_set(cabin_scene(), cross_side_attenuation_db=-1.0)

    def test_needs_two_by_two(self):
        scene, _ = _free_field([1.0, 0.0, 0.0])
        with pytest.raises(ValueError, match="exactly two"):
            generate_rir_set(scene)

    def test_dump(self, tmp_path):
        ir_set = generate_rir_set(cabin_scene())
        paths = dump_impulse_responses(ir_set, str(tmp_path))
        assert sorted(os.path.basename(p) for p in paths) == [
            "ir_driver_mic1.wav", "ir_driver_mic2.wav", "ir_passenger_mic1.wav", "ir_passenger_mic2.wav",
        ]
        back = load_wav(paths[0])
        np.testing.assert_allclose(back.channels[0], ir_set.ir[0, 0], atol=1e-7)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


class TestRenderScene:
    def test_impulse_reproduces_ir(self):
        scene = cabin_scene()
        dry = np.zeros(2048)
        dry[0] = 1.0
        render = render_scene({DRIVER: dry}, PositionSchedule.static(scene))
        ir_set = generate_rir_set(scene)
        comp = render.components[DRIVER].channels
        np.testing.assert_allclose(comp[:, :scene.ir_length], ir_set.ir[0], atol=1e-9)

    def test_identical_segments_are_a_no_op(self):
        scene = cabin_scene()
        rng = np.random.default_rng(0)
        dry = {DRIVER: rng.standard_normal(8000), PASSENGER: rng.standard_normal(8000)}
        single = render_scene(dry, PositionSchedule.static(scene))
        double = render_scene(dry, PositionSchedule([ScheduleSegment(0.0, scene), ScheduleSegment(0.25, scene)]))
        np.testing.assert_allclose(double.mics.channels, single.mics.channels, atol=1e-9)

    def test_mic_sum_equals_components(self):
        rng = np.random.default_rng(1)
        dry = {DRIVER: rng.standard_normal(4000), PASSENGER: rng.standard_normal(4000)}
        render = render_scene(dry, PositionSchedule.static(cabin_scene()))
        total = render.components[DRIVER].channels + render.components[PASSENGER].channels
        np.testing.assert_array_equal(render.mics.channels, total)
        assert render.mics.n_samples == 4000

    def test_schedule_gap(self):
        with pytest.raises(ValueError, match="schedule gap"):
            render_scene({DRIVER: np.zeros(100)}, PositionSchedule([ScheduleSegment(0.5, cabin_scene())]))

    def test_unordered_schedule(self):
        scene = cabin_scene()
        with pytest.raises(ValueError, match="increase strictly"):
            PositionSchedule([ScheduleSegment(0.0, scene), ScheduleSegment(0.0, scene)])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="differ in length"):
            render_scene({DRIVER: np.zeros(100), PASSENGER: np.zeros(90)}, PositionSchedule.static(cabin_scene()))

    def test_switch_changes_later_output(self):
        scene = cabin_scene()
        moved = displaced_scene(scene, 0.15)
        rng = np.random.default_rng(2)
        dry = {DRIVER: rng.standard_normal(16000)}
        static = render_scene(dry, PositionSchedule.static(scene)).mics.channels
        switched = render_scene(dry, PositionSchedule([ScheduleSegment(0.0, scene), ScheduleSegment(0.5, moved)]))
        np.testing.assert_allclose(switched.mics.channels[:, :7999], static[:, :7999], atol=1e-9)
        assert not np.allclose(switched.mics.channels[:, 9000:], static[:, 9000:])
