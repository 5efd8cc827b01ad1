"""Test loading, validating and saving run configurations"""

import json
import logging
from pathlib import Path

import pytest

from graspgen.config import (
    Config,
    ConfigError,
    config_from_dict,
    load_config,
    preset_names,
    save_config,
)
from graspgen.reward import RewardWeights
from graspgen.sim import ShapeKind


@pytest.mark.parametrize("name", preset_names())
def test_presets_load(name: str) -> None:
    """Every shipped preset is valid"""
    config = load_config(name)
    config.check()
    assert config.search_config().iterations > 0


def test_default_preset(default_config: Config) -> None:
    """Default preset matches the built-in defaults"""
    assert default_config == Config()
    assert load_config() == default_config
    assert [obj.name for obj in default_config.objects()] == ["disc", "rect", "hexagon"]
    disc = default_config.objects()[0]
    assert disc.shape == ShapeKind.DISC
    assert disc.initial_pose == (0.0, 0.06, 0.0)
    settings = default_config.evaluation_settings()
    assert settings.tension_levels == (5.0, 10.0, 15.0)
    assert settings.weights == RewardWeights.from_preset("worked")
    assert settings.sim.t_max == 5.0
    search = default_config.search_config(seed=9, iterations=3)
    assert (search.seed, search.iterations) == (9, 3)
    assert search.reward_normalizer == pytest.approx(3 * 13.0)


def test_desk_preset() -> None:
    """Desk preset narrows the grammar and the control grid"""
    config = load_config("desk")
    grammar = config.grammar.grammar()
    assert grammar.limits.max_fingers == 2
    assert grammar.params.lengths == (0.05, 0.08)
    assert config.evaluation_settings().tension_levels == (5.0, 15.0)
    assert config.sim.sim_config().t_max == 3.0


def test_explicit_weights() -> None:
    """Weights may be a preset name or six numbers"""
    config = load_config("generic")
    assert config.reward.reward_weights().as_tuple() == (3.0, 1.0, 2.0, 2.0, 1.0, 5.0)
    text = config_from_dict({"reward": {"weights": "text"}})
    assert text.reward.reward_weights() == RewardWeights.from_preset("text")
    with pytest.raises(ConfigError):
        config_from_dict({"reward": {"weights": [1.0, 2.0]}})
    with pytest.raises(ConfigError):
        config_from_dict({"reward": {"weights": "strongest"}})


def test_round_trip(tmp_path: Path) -> None:
    """A saved configuration loads back equal and saves identically"""
    config = config_from_dict(
        {
            "sim": {"force_directions": [[2.0, 0.0], [0.0, -1.0]], "t_max_s": 2.0},
            "search": {"seed": 4, "backprop": "mean"},
        }
    )
    path = tmp_path / "nested" / "run.json"
    save_config(config, path)
    loaded = load_config(path)
    assert loaded == config
    assert loaded.sim.force_directions == [(1.0, 0.0), (0.0, -1.0)]
    assert loaded.to_json() == path.read_text(encoding="utf-8")


def test_unknown_keys_warn(caplog: pytest.LogCaptureFixture) -> None:
    """Unknown keys are logged with their path and otherwise ignored"""
    caplog.set_level(logging.WARNING, logger="graspgen")
    config = config_from_dict(
        {
            "colour": "blue",
            "sim": {"t_max_s": 4.0, "gravity": 9.81},
            "reward": {
                "objects": [
                    {"name": "ball", "shape": "disc", "radius_m": 0.02, "hue": 1}
                ]
            },
        }
    )
    assert config.sim.t_max_s == 4.0
    messages = [record.getMessage() for record in caplog.records]
    assert any("'colour'" in message for message in messages)
    assert any("'sim.gravity'" in message for message in messages)
    assert any("'reward.objects[0].hue'" in message for message in messages)


def test_invalid_values_name_field() -> None:
    """Validation errors carry the dotted path of the bad key"""
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict({"sim": {"step_s": -1.0}})
    assert exc_info.value.field == "sim.step_s"
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict({"search": {"iterations": 0}})
    assert exc_info.value.field == "search.iterations"
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict({"reward": {"tension_levels_n": [5.0, -1.0]}})
    assert exc_info.value.field == "reward.tension_levels_n"
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict({"reward": {"tension_levels_n": [5.0, 10.0, 5.0]}})
    assert exc_info.value.field == "reward.tension_levels_n"
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict({"sim": {"step_s": 0.5, "t_max_s": 1.0}})
    assert exc_info.value.field == "sim.step_s"


def test_inconsistent_grammar() -> None:
    """Limits that contradict each other are a grammar error"""
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict({"grammar": {"min_fingers": 3, "max_fingers": 2}})
    assert exc_info.value.field == "grammar"


def test_bad_object() -> None:
    """Objects without the dimensions of their shape are rejected"""
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict({"reward": {"objects": [{"name": "box", "shape": "rect"}]}})
    assert exc_info.value.field == "reward.objects.box"
    with pytest.raises(ConfigError):
        config_from_dict(
            {
                "reward": {
                    "objects": [
                        {"name": "a", "shape": "disc", "radius_m": 0.02},
                        {"name": "a", "shape": "disc", "radius_m": 0.03},
                    ]
                }
            }
        )


def test_missing_sources(tmp_path: Path) -> None:
    """Missing files, unknown presets and bad JSON are configuration errors"""
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    with pytest.raises(ConfigError):
        load_config("workshop")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    listed = tmp_path / "list.json"
    listed.write_text(json.dumps([1, 2]), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listed)


def test_render_settings(default_config: Config) -> None:
    """Render section maps onto renderer settings"""
    settings = default_config.render_settings()
    assert settings.width == 400
    assert settings.frame_interval == 0.1
