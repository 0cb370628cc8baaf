import pytest

from errors import ConfigError
from settings import EnvConfig, RunConfig


@pytest.mark.parametrize('increment', [30.0, 40.0, 50.0])
def test_goal_increment_choices_are_accepted(increment):
    assert EnvConfig(goal_increment_deg=increment).goal_increment_deg == increment


@pytest.mark.parametrize('overrides', [
    {'goal_increment_deg': 45.0},
    {'goal_tolerance': 0.3},
    {'axis': '+w'},
])
def test_env_values_outside_the_choices_are_rejected(overrides):
    with pytest.raises(ConfigError):
        RunConfig.from_toml(None, env=overrides)


def test_toml_goal_settings(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text('[env]\ngoal_increment_deg = 30\ngoal_tolerance = 0.25\n')
    config = RunConfig.from_toml(path)
    assert config.env.goal_increment_deg == 30.0
    assert config.env.tolerance_m == pytest.approx(0.25 * config.env.goal_tolerance_scale)


def test_student_tolerance_uses_the_same_choices():
    assert RunConfig().distill.goal_tolerance == 0.25
    with pytest.raises(ConfigError):
        RunConfig.from_toml(None, distill={'goal_tolerance': 0.5})
