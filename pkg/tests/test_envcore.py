import math

import numpy as np
import pytest

from classes import GoalSpec, Pose, Quaternion, UnitVector3
from constants import REWARD_TERM_COLUMNS, TACTILE_COLUMNS, TERMINATION_CAUSES, action_clip, action_ema_eta
from envcore import (
    PRIVILEGED_DIM, RotateEnv, VectorEnv, check_termination, next_goal, observation_size, process_action,
    termination_cause,
)
from errors import EnvironmentDoneError, InputDomainError
from handsim import initial_state
from rewards import CurriculumTracker
from rotmath import delta_rotation_array
from settings import TactileConfig


@pytest.mark.parametrize('mode, size', [
    ('dense', 95), ('dense_pose', 91), ('dense_force', 87), ('binary', 83), ('proprio', 79),
])
def test_observation_sizes(mode, size):
    assert observation_size(mode) == size


def test_unknown_tactile_mode():
    with pytest.raises(InputDomainError):
        observation_size('vision')


def test_process_action_clips_and_smooths(hand):
    smoothed, target = process_action(np.ones(16), np.zeros(16), hand.q0)
    assert np.allclose(smoothed, action_ema_eta * action_clip)
    assert np.allclose(target, hand.q0 + action_ema_eta * action_clip)
    _, limited = process_action(np.ones(16), np.zeros(16), hand.joint_upper, hand.joint_lower, hand.joint_upper)
    assert np.allclose(limited, hand.joint_upper)


def test_next_goal_advances_about_axis():
    goal = GoalSpec(
        axis=UnitVector3(x=0.0, y=0.0, z=1.0), pose=Pose(position=np.array([0.0, 0.0, 0.1])),
        increment=math.radians(30.0), tolerance=0.0075,
    )
    advanced = next_goal(Quaternion.identity(), goal)
    assert advanced.count == 1
    assert np.allclose(advanced.pose.position, [0.0, 0.0, 0.1])
    step = delta_rotation_array(np.array([1.0, 0.0, 0.0, 0.0]), advanced.pose.orientation.as_array(),
                                np.array([0.0, 0.0, 1.0]))
    assert step == pytest.approx(math.pi / 6)


def test_termination_causes():
    assert termination_cause(0.2, 0.0) == 'fell'
    assert termination_cause(0.01, 1.0) == 'axis_deviated'
    assert termination_cause(0.01, 0.1) == 'continue'


def turning_window(axis, total=0.3, steps=10):
    axis = np.asarray(axis, dtype=np.float64)
    angles = np.linspace(0.0, total, steps)
    return np.array([[math.cos(a / 2), *(math.sin(a / 2) * axis)] for a in angles])


@pytest.mark.parametrize('axis, expected', [
    ((0.0, 0.0, 1.0), 'continue'),
    ((0.0, 0.0, -1.0), 'continue'),
    ((1.0, 0.0, 0.0), 'axis_deviated'),
])
def test_termination_treats_the_axis_as_a_line(hand, axis, expected):
    goal = GoalSpec(axis=UnitVector3(x=0.0, y=0.0, z=1.0), pose=Pose(position=np.array([0.0, 0.0, 0.1])),
                    increment=math.radians(30.0), tolerance=0.0075)
    window = turning_window(axis)
    state = initial_state(hand, None, np.array([0.0, 0.0, 0.1]), window[-1])
    assert check_termination(state, goal, window) == expected


def run_until_done(env, limit=50):
    env.reset()
    for _ in range(limit):
        obs, priv, breakdown, done, info = env.step(np.zeros(16))
        if done:
            return obs, priv, breakdown, info
    raise AssertionError('episode did not finish')


def test_episode_lifecycle(small_config):
    curriculum = CurriculumTracker()
    env = RotateEnv(small_config, seed=0, curriculum=curriculum)
    obs, priv = env.reset()
    assert obs.shape == (95,)
    assert priv.shape == (PRIVILEGED_DIM,)
    assert np.allclose(obs[-3:], [0.0, 0.0, 1.0])

    obs, priv, breakdown, info = run_until_done(env)
    assert info['cause'] in ('fell', 'axis_deviated', 'timeout')
    assert info['episode']['length'] <= small_config.env.max_steps
    assert np.isfinite(breakdown.total)
    assert curriculum.episodes == 1
    with pytest.raises(EnvironmentDoneError):
        env.step(np.zeros(16))


def test_recorded_rows_carry_tactile_and_reward_columns(small_config):
    env = RotateEnv(small_config, seed=3, record=True)
    _, _, _, info = run_until_done(env)
    assert len(env.log_rows) == info['episode']['length']
    row = env.log_rows[-1]
    for column in TACTILE_COLUMNS + ['total', 'r_kp', 'goals', 'cause']:
        assert column in row


def test_proprioceptive_mode_drops_touch(small_config):
    config = small_config.model_copy(update={'tactile': TactileConfig(mode='proprio')})
    obs, _ = RotateEnv(config, seed=0).reset()
    assert obs.shape == (79,)


def test_vector_env_resets_finished_episodes(small_config):
    env = VectorEnv(small_config, num_envs=2, seed=0)
    obs, priv = env.reset()
    assert obs.shape == (2, 95) and priv.shape == (2, PRIVILEGED_DIM)
    finished = 0
    for _ in range(small_config.env.max_steps + 1):
        obs, priv, rewards, dones, infos = env.step(np.zeros((2, 16)))
        assert rewards.shape == (2,)
        finished += int(dones.sum())
    env.close()
    assert finished >= 2


def test_tactile_noise_override_reaches_env_params(small_config):
    config = small_config.model_copy(update={
        'randomization': small_config.randomization.model_copy(update={'enabled': True}),
        'tactile': TactileConfig(pose_noise=0.02, force_noise=0.07),
    })
    env = RotateEnv(config, seed=0)
    env.reset()
    assert env.params.pose_noise == 0.02
    assert env.params.force_noise == 0.07


def test_recorded_rows_hold_every_reward_term(small_config):
    env = RotateEnv(small_config, seed=1, record=True)
    run_until_done(env)
    for row in env.log_rows:
        assert set(REWARD_TERM_COLUMNS) <= set(row)
        assert row['cause'] in TERMINATION_CAUSES
