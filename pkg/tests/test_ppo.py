import numpy as np
import pytest

from networks import Adam, PolicyNet
from ppo import LinearToyEnv, RolloutCollector, gae, gaussian_kl, ppo_update, train_teacher, train_toy
from settings import LearnConfig


def test_gae_without_discounting():
    rewards = np.ones((3, 1))
    values = np.zeros((3, 1))
    advantages, returns = gae(rewards, values, np.zeros((3, 1)), gamma=1.0, tau=1.0)
    assert advantages[:, 0] == pytest.approx([3.0, 2.0, 1.0])
    assert returns[:, 0] == pytest.approx([3.0, 2.0, 1.0])


def test_gae_stops_at_episode_end():
    rewards = np.ones((3, 1))
    dones = np.array([[0.0], [1.0], [0.0]])
    advantages, _ = gae(rewards, np.zeros((3, 1)), dones, gamma=1.0, tau=1.0, last_value=10.0)
    assert advantages[:, 0] == pytest.approx([2.0, 1.0, 11.0])


def test_gae_with_discounting():
    advantages, _ = gae([[1.0]], [[0.5]], [[0.0]], gamma=0.9, tau=0.95, last_value=2.0)
    assert advantages[0, 0] == pytest.approx(1.0 + 0.9 * 2.0 - 0.5)


def test_gaussian_kl():
    mean = np.zeros((4, 2))
    log_std = np.zeros((4, 2))
    assert gaussian_kl(mean, log_std, mean, log_std) == pytest.approx(0.0)
    assert gaussian_kl(mean, log_std, mean + 1.0, log_std) == pytest.approx(1.0)


def test_collector_and_update_on_toy_task():
    env = LinearToyEnv(num_envs=8, horizon=4, seed=0)
    net = PolicyNet(obs_dim=1, action_dim=1, encoder=None, policy_units=(8,), seed=0)
    rng = np.random.default_rng(0)
    collector = RolloutCollector(env, net, rng, action_scale=1.0, normalize=False)
    batch, episodes = collector.collect(8)
    assert len(batch) == 64
    assert batch.inputs.shape == (64, 1)
    assert len(episodes) == 16
    config = LearnConfig(minibatch_size=16, mini_epochs=2, lr=1e-3, normalize_obs=False)
    stats = ppo_update(net, Adam(net.params, lr=config.lr), batch, config, rng)
    assert stats['steps'] == 8
    assert np.isfinite(stats['value_loss'])
    assert stats['learning_rate'] > 0


@pytest.mark.slow
def test_ppo_improves_toy_return():
    history = train_toy(updates=200, seed=0)
    initial, final = np.nanmean(history[:10]), np.nanmean(history[-10:])
    assert initial < 0
    assert final - initial >= 0.5 * abs(initial)


@pytest.mark.slow
def test_train_teacher_produces_curve(small_config):
    net, normalizer, curve = train_teacher(small_config)
    assert len(curve) == 1
    assert list(curve.columns)[:3] == ['iteration', 'env_steps', 'mean_return']
    assert normalizer.mean.shape == (net.obs_dim + net.priv_dim,)
