import numpy as np
import pytest

from distillation import (
    HistoryBuffer, TeacherCollector, distill_losses, distill_step, make_student, nll_floor, pad_history,
    train_student,
)
from networks import Adam, PolicyNet, RunningMeanStd


def small_teacher():
    return PolicyNet(obs_dim=4, action_dim=2, encoder='mlp', priv_dim=3, encoder_units=(6, 2), policy_units=(8,),
                     seed=0)


def test_pad_history_repeats_first_observation():
    window = pad_history([[1.0], [2.0]], 4)
    assert window[:, 0].tolist() == [1.0, 1.0, 1.0, 2.0]
    assert pad_history(np.arange(6.0)[:, None], 3)[:, 0].tolist() == [3.0, 4.0, 5.0]


def test_history_buffer_push_and_reset():
    buffer = HistoryBuffer(num_envs=2, length=3, obs_dim=1)
    buffer.reset(np.array([[1.0], [5.0]]))
    window = buffer.push(np.array([[2.0], [6.0]]))
    assert window[0, :, 0].tolist() == [1.0, 1.0, 2.0]
    window = buffer.push(np.array([[3.0], [9.0]]), reset_mask=np.array([False, True]))
    assert window[0, :, 0].tolist() == [1.0, 2.0, 3.0]
    assert window[1, :, 0].tolist() == [9.0, 9.0, 9.0]


def test_student_starts_from_teacher_trunk():
    teacher = small_teacher()
    student = make_student(teacher, history=30)
    assert student.encoder == 'tcn'
    assert student.latent == teacher.latent
    for key in student.trunk_keys():
        assert np.array_equal(student.params[key], teacher.params[key])


class CountingEnv:
    """Vector-env stand-in with obs dim 4, privileged dim 3 and episodes that never end."""

    def __init__(self, num_envs=2):
        self.num_envs = num_envs
        self.resets = 0
        self.steps = np.zeros(num_envs, dtype=int)

    def _obs(self):
        obs = np.tile(self.steps[:, None].astype(float), (1, 4)) * 0.01
        return obs, np.zeros((self.num_envs, 3))

    def reset(self):
        self.resets += 1
        self.steps[:] = 0
        return self._obs()

    def step(self, actions):
        self.steps += 1
        obs, priv = self._obs()
        return obs, priv, np.zeros(self.num_envs), np.zeros(self.num_envs), [{} for _ in range(self.num_envs)]


def test_collector_keeps_episodes_across_collections():
    env = CountingEnv()
    collector = TeacherCollector(env, small_teacher(), RunningMeanStd(7), history=30, action_scale=0.1)
    for _ in range(3):
        data = collector.collect(8)
        assert data['history'].shape == (16, 30, 4)
        assert data['teacher_inputs'].shape == (16, 7)
    assert env.resets == 1
    assert env.steps.tolist() == [24, 24]
    # the window holds the last 30 observations, 24 real and 6 copies of the first
    window = collector.buffer.window[0, :, 0]
    assert window[-1] == pytest.approx(0.24)
    assert window[:6].tolist() == pytest.approx([0.0] * 6)
    assert window[6] == pytest.approx(0.01)


def learnable_batch(rng, n):
    """Histories whose last frame determines the teacher's privileged input."""
    obs = rng.normal(0.0, 0.5, size=(n, 4))
    return {
        'history': np.repeat(obs[:, None, :], 30, axis=1),
        'teacher_inputs': np.concatenate([obs, obs[:, :3]], axis=-1),
    }


def test_distillation_reduces_held_out_loss():
    rng = np.random.default_rng(7)
    teacher = PolicyNet(obs_dim=4, action_dim=2, encoder='mlp', priv_dim=3, encoder_units=(2,), policy_units=(8,),
                        seed=0)
    student = make_student(teacher, history=30, seed=1)
    train, held_out = learnable_batch(rng, 512), learnable_batch(rng, 256)
    log_std = student.params['log_std'].copy()
    mse0, nll0, excess0 = distill_losses(student, teacher, held_out)
    assert nll0 == pytest.approx(excess0 + nll_floor(student))
    optimizer = Adam(student.params, lr=3e-3)
    for _ in range(800):
        distill_step(student, teacher, train, optimizer)
    mse1, _, excess1 = distill_losses(student, teacher, held_out)
    assert mse1 + excess1 <= 0.2 * (mse0 + excess0)
    assert np.array_equal(student.params['log_std'], log_std)


@pytest.mark.slow
def test_train_student_curve(small_config):
    from envcore import PRIVILEGED_DIM, observation_size
    from ppo import make_teacher

    obs_dim = observation_size(small_config.tactile.mode)
    teacher = make_teacher(small_config, obs_dim)
    normalizer = RunningMeanStd(obs_dim + PRIVILEGED_DIM)
    student, curve = train_student(small_config, teacher, normalizer)
    assert curve['iteration'].tolist() == [0, 1]
    assert curve['env_steps'].tolist() == [0, 8]
    assert np.isnan(curve['mse'].iloc[0])
    assert np.isfinite(curve['holdout_total']).all()
    assert student.encoder == 'tcn'


@pytest.mark.slow
def test_train_student_reduces_held_out_loss(small_config):
    from envcore import PRIVILEGED_DIM, observation_size
    from ppo import make_teacher

    config = small_config.model_copy(update={
        'distill': small_config.distill.model_copy(update={'total_steps': 400, 'mini_epochs': 4, 'lr': 3e-3}),
    })
    obs_dim = observation_size(config.tactile.mode)
    teacher = make_teacher(config, obs_dim)
    _, curve = train_student(config, teacher, RunningMeanStd(obs_dim + PRIVILEGED_DIM))
    assert len(curve) == 51
    assert curve['holdout_total'].iloc[-1] < curve['holdout_total'].iloc[0]
