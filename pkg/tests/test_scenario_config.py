"""Tests for scenario_config (JSON parsing, defaults, validation, hashing)."""

import json
import math
import os

import pytest

from noise_synth import HOTH, PINK
from scenario_config import ScenarioConfig, parse_scenario

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "scenarios")


def _write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(path)


class TestDefaults:
    def test_empty_file(self, tmp_path):
        cfg = parse_scenario(_write(tmp_path, ""))
        assert cfg.scene.room_dims == [5.0, 2.0, 1.78]
        assert cfg.scene.rt60 == pytest.approx(0.07)
        assert cfg.mwf.frame_ms == 8.0
        assert cfg.mwf.lam == 0.96
        assert cfg.noise.colors == ["white", "pink", "red", "green", "hoth"]

    def test_empty_object(self, tmp_path):
        assert parse_scenario(_write(tmp_path, {})).as_dict() == ScenarioConfig().as_dict()

    def test_resolved_derived_sizes(self, tmp_path):
        cfg = parse_scenario(_write(tmp_path, {"mwf": {"frame_ms": 100}}))
        derived = cfg.resolved()["derived"]
        assert (derived["frame_len"], derived["hop"], derived["fft_len"]) == (1600, 800, 2048)
        assert derived["reflection_coefficient"] == pytest.approx(0.297, abs=0.002)

    @pytest.mark.parametrize("name", sorted(os.listdir(SCENARIO_DIR)))
    def test_bundled_scenarios_parse(self, name):
        parse_scenario(os.path.join(SCENARIO_DIR, name))


class TestValidation:
    def test_driver_outside_room(self, tmp_path):
        path = _write(tmp_path, {"scene": {"driver": {"position": [2.5, 2.5, 0.75]}}})
        with pytest.raises(ValueError, match=r"scene\.driver\.position\[1\]"):
            parse_scenario(path)

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ValueError, match=r"unknown key 'mwf\.lamda'"):
            parse_scenario(_write(tmp_path, {"mwf": {"lamda": 0.9}}))

    def test_wrong_type(self, tmp_path):
        with pytest.raises(ValueError, match=r"noise\.input_snrs_db\[1\]: expected a number"):
            parse_scenario(_write(tmp_path, {"noise": {"input_snrs_db": [5, "high"]}}))

    def test_unknown_color(self, tmp_path):
        with pytest.raises(ValueError, match=r"noise\.colors\[0\]"):
            parse_scenario(_write(tmp_path, {"noise": {"colors": ["brown"]}}))

    def test_bad_lambda(self, tmp_path):
        with pytest.raises(ValueError, match="mwf: lambda"):
            parse_scenario(_write(tmp_path, {"mwf": {"lambda": 1.0}}))

    def test_unknown_experiment(self, tmp_path):
        with pytest.raises(ValueError, match="experiment"):
            parse_scenario(_write(tmp_path, {"experiment": "reverb"}))

    def test_missing_utterance(self, tmp_path):
        with pytest.raises(ValueError, match=r"speech\.utterances\[0\]"):
            parse_scenario(_write(tmp_path, {"speech": {"utterances": ["absent.wav"]}}))

    def test_invalid_json(self, tmp_path):
        with pytest.raises(ValueError, match="invalid JSON at line 3"):
            parse_scenario(_write(tmp_path, '{\n  "experiment": \n}'))

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(RuntimeError, match="Cannot read scenario"):
            parse_scenario(str(tmp_path / "absent.json"))

    def test_head_interval_order(self, tmp_path):
        doc = {"head_movement": {"interval_s": [52, 36]}}
        with pytest.raises(ValueError, match=r"head_movement\.interval_s"):
            parse_scenario(_write(tmp_path, doc))


class TestMwfConfig:
    def test_lambda_alias(self, tmp_path):
        cfg = parse_scenario(_write(tmp_path, {"mwf": {"lambda": 0.9}}))
        assert cfg.mwf.lam == 0.9
        assert cfg.as_dict()["mwf"]["lambda"] == 0.9
        assert cfg.mwf_config().lam == 0.9

    def test_hoth_preset(self):
        cfg = ScenarioConfig()
        hoth = cfg.mwf_config(color=HOTH)
        assert [(b.max_frequency, b.delta) for b in hoth.delta_schedule] == [(312.5, 100.0), (math.inf, 1.0)]
        pink = cfg.mwf_config(color=PINK)
        assert [(b.max_frequency, b.delta) for b in pink.delta_schedule] == [(math.inf, 1.0)]

    def test_preset_disabled(self, tmp_path):
        cfg = parse_scenario(_write(tmp_path, {"mwf": {"hoth_preset": False, "delta": 2.0}}))
        assert [b.delta for b in cfg.mwf_config(color=HOTH).delta_schedule] == [2.0]

    def test_explicit_schedule_wins(self):
        cfg = parse_scenario(os.path.join(SCENARIO_DIR, "hoth_custom_delta.json"))
        schedule = cfg.mwf_config(color=HOTH).delta_schedule
        assert [(b.max_frequency, b.delta) for b in schedule] == [(250.0, 50.0), (math.inf, 1.0)]

    def test_overrides(self):
        cfg = ScenarioConfig()
        mwf = cfg.mwf_config(frame_ms=20.0, adaptation_stop_time=36.0)
        assert mwf.frame_ms == 20.0
        assert mwf.adaptation_stop_time == 36.0


class TestHash:
    def test_deterministic(self, tmp_path):
        a = parse_scenario(_write(tmp_path, {"noise": {"seed": 3}}, "a.json"))
        b = parse_scenario(_write(tmp_path, {"noise": {"seed": 3}}, "b.json"))
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 16

    def test_ignores_output_dir(self):
        assert ScenarioConfig(output_dir="x").config_hash() == ScenarioConfig(output_dir="y").config_hash()

    def test_tracks_settings(self, tmp_path):
        base = parse_scenario(_write(tmp_path, {}, "a.json"))
        other = parse_scenario(_write(tmp_path, {"mwf": {"lambda": 0.95}}, "b.json"))
        assert base.config_hash() != other.config_hash()

    def test_build_scene_overrides(self):
        scene = ScenarioConfig().build_scene(reflection_coefficient=0.0)
        assert scene.beta == 0.0
        assert scene.rt60 == pytest.approx(0.07)
