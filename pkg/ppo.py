"""
PPO teacher training.

The policy acts in unit scale: sampled actions are clipped to [-1, 1] and
multiplied by ``action_scale`` before reaching the environment, whose own
action pipeline clips again.
"""
import logging
import math
from typing import Optional

import numpy as np
import pandas as pd

from classes import ArrayModel, FloatArray
from constants import (
    RUNTIME_ERRORS, TRAINING_CURVE_COLUMNS, action_clip, gae_tau, gamma, kl_divergence_factor,
    kl_divergence_patience, max_lr, min_lr,
)
from envcore import PRIVILEGED_DIM, VectorEnv
from errors import TrainingDivergence
from networks import Adam, PolicyNet, RunningMeanStd, log_prob, net_forward, net_gradient, sample_action
from rewards import CurriculumTracker
from settings import LearnConfig, RunConfig

logger = logging.getLogger(__name__)


def gae(rewards, values, dones, gamma=gamma, tau=gae_tau, last_value=0.0):
    """Generalized advantage estimates and returns along the leading (time) axis.

    ``dones[t]`` marks that the episode ended after step t, so step t does not
    bootstrap from step t + 1.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(last_value, dtype=np.float64) * np.ones_like(rewards[0])
    running = np.zeros_like(rewards[0])
    for t in reversed(range(len(rewards))):
        keep = 1.0 - dones[t]
        delta = rewards[t] + gamma * keep * next_value - values[t]
        running = delta + gamma * tau * keep * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


def gaussian_kl(mean0, log_std0, mean1, log_std1):
    """Mean KL(old || new) between diagonal Gaussians over a batch."""
    var0 = np.exp(2.0 * log_std0)
    var1 = np.exp(2.0 * log_std1)
    kl = log_std1 - log_std0 + (var0 + (mean0 - mean1) ** 2) / (2.0 * var1) - 0.5
    return float(np.mean(np.sum(kl, axis=-1)))


class RolloutBatch(ArrayModel):
    inputs: FloatArray
    actions: FloatArray
    log_probs: FloatArray
    rewards: FloatArray
    values: FloatArray
    dones: FloatArray
    advantages: FloatArray
    returns: FloatArray

    def __len__(self):
        return len(self.actions)

    def minibatches(self, rng, size):
        order = rng.permutation(len(self))
        for start in range(0, len(order), size):
            yield order[start:start + size]


# ============================================================================
# UPDATE
# ============================================================================

def ppo_update(net: PolicyNet, optimizer: Adam, batch: RolloutBatch, config: Optional[LearnConfig] = None, rng=None):
    """Clipped-surrogate update over ``config.mini_epochs`` passes; returns stats."""
    config = config or LearnConfig()
    rng = rng or np.random.default_rng(0)
    threshold = config.kl_threshold
    old_mean, old_log_std, _ = net_forward(net, batch.inputs)
    advantages = batch.advantages
    if config.normalize_advantage and len(advantages) > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    stats = {'policy_loss': [], 'value_loss': [], 'approx_kl': [], 'rejected': 0, 'steps': 0}
    strikes = 0
    stop = False
    for _ in range(config.mini_epochs):
        for idx in batch.minibatches(rng, config.minibatch_size):
            inputs = batch.inputs[idx]
            before_mean, before_log_std, _ = net_forward(net, inputs)
            snapshot = {key: value.copy() for key, value in net.params.items()}
            moments = ({k: v.copy() for k, v in optimizer.m.items()},
                       {k: v.copy() for k, v in optimizer.v.items()}, optimizer.t)
            _, grads, step_stats = net_gradient(net, 'ppo', {
                'inputs': inputs, 'actions': batch.actions[idx], 'old_log_prob': batch.log_probs[idx],
                'advantages': advantages[idx], 'returns': batch.returns[idx], 'clip': config.clip,
                'value_coef': config.value_coef, 'entropy_coef': config.entropy_coef,
            })
            optimizer.step(net.params, grads, max_norm=config.grad_norm)
            after_mean, after_log_std, _ = net_forward(net, inputs)
            step_kl = gaussian_kl(before_mean, before_log_std, after_mean, after_log_std)
            stats['steps'] += 1

            if step_kl > kl_divergence_factor * threshold:
                strikes += 1
                if strikes >= kl_divergence_patience:
                    raise TrainingDivergence(RUNTIME_ERRORS['KL_DIVERGENCE'].format(
                        kl=step_kl, limit=kl_divergence_factor * threshold, count=strikes,
                    ))
            else:
                strikes = 0
            if step_kl > 2.0 * threshold:
                net.params = snapshot
                optimizer.m, optimizer.v, optimizer.t = moments
                optimizer.lr = max(optimizer.lr / 1.5, min_lr)
                stats['rejected'] += 1
                logger.debug(f"Rejected PPO step with KL {step_kl:.4f}; lr now {optimizer.lr:.2e}")
                continue

            kl = gaussian_kl(old_mean[idx], old_log_std[idx], after_mean, after_log_std)
            stats['approx_kl'].append(kl)
            stats['policy_loss'].append(step_stats['policy_loss'])
            stats['value_loss'].append(step_stats['value_loss'])
            if config.kl_mode == 'adaptive':
                if kl > 2.0 * threshold:
                    optimizer.lr = max(optimizer.lr / 1.5, min_lr)
                elif kl < 0.5 * threshold:
                    optimizer.lr = min(optimizer.lr * 1.5, max_lr)
            elif kl > threshold:
                stop = True
                break
        if stop:
            break

    return {
        'policy_loss': float(np.mean(stats['policy_loss'])) if stats['policy_loss'] else math.nan,
        'value_loss': float(np.mean(stats['value_loss'])) if stats['value_loss'] else math.nan,
        'approx_kl': float(np.mean(stats['approx_kl'])) if stats['approx_kl'] else 0.0,
        'rejected': stats['rejected'], 'steps': stats['steps'], 'learning_rate': optimizer.lr,
    }


# ============================================================================
# ROLLOUTS
# ============================================================================

class RolloutCollector:
    """Steps a vectorized environment with the current policy."""

    def __init__(self, env, net: PolicyNet, rng, normalizer: Optional[RunningMeanStd] = None,
                 action_scale=action_clip, normalize=True):
        self.env = env
        self.net = net
        self.rng = rng
        self.action_scale = action_scale
        self.normalize = normalize
        self.normalizer = normalizer or RunningMeanStd(net.obs_dim + net.priv_dim)
        obs, priv = env.reset()
        self.raw = self._join(obs, priv)

    def _join(self, obs, priv):
        return np.concatenate([obs, priv], axis=-1) if self.net.priv_dim else obs

    def inputs(self, raw):
        return self.normalizer.normalize(raw) if self.normalize else raw

    def collect(self, steps):
        net = self.net
        keys = ('inputs', 'actions', 'log_probs', 'rewards', 'values', 'dones')
        buffer = {key: [] for key in keys}
        episodes = []
        for _ in range(steps):
            if self.normalize:
                self.normalizer.update(self.raw)
            x = self.inputs(self.raw)
            mean, log_std, value = net_forward(net, x)
            action = sample_action(mean, log_std, self.rng)
            obs, priv, rewards, dones, infos = self.env.step(np.clip(action, -1.0, 1.0) * self.action_scale)
            buffer['inputs'].append(x)
            buffer['actions'].append(action)
            buffer['log_probs'].append(log_prob(mean, log_std, action))
            buffer['rewards'].append(rewards)
            buffer['values'].append(value)
            buffer['dones'].append(dones)
            episodes.extend(info['episode'] for info in infos if 'episode' in info)
            self.raw = self._join(obs, priv)

        _, _, last_value = net_forward(net, self.inputs(self.raw))
        stacked = {key: np.stack(value) for key, value in buffer.items()}
        advantages, returns = gae(stacked['rewards'], stacked['values'], stacked['dones'],
                                  last_value=last_value)

        def flat(a):
            return a.reshape(-1, *a.shape[2:])

        batch = RolloutBatch(
            **{key: flat(value) for key, value in stacked.items()},
            advantages=flat(advantages), returns=flat(returns),
        )
        return batch, episodes


# ============================================================================
# TOY CONTROL TASK
# ============================================================================

class LinearToyEnv:
    """Batched 1-D regulator: x' = x + gain * a, reward -x'^2, fixed horizon.

    Follows the VectorEnv interface with an empty privileged vector.
    """

    obs_dim = 1

    def __init__(self, num_envs=32, horizon=16, gain=0.5, seed=0):
        self.num_envs = num_envs
        self.horizon = horizon
        self.gain = gain
        self.rng = np.random.default_rng(seed)
        self.x = np.zeros(num_envs)
        self.t = np.zeros(num_envs, dtype=int)
        self.ret = np.zeros(num_envs)

    def _obs(self):
        return self.x[:, None].copy(), np.zeros((self.num_envs, 0))

    def reset(self):
        self.x = self.rng.uniform(-1.0, 1.0, self.num_envs)
        self.t[:] = 0
        self.ret[:] = 0.0
        return self._obs()

    def step(self, actions):
        self.x = self.x + self.gain * np.asarray(actions, dtype=np.float64)[:, 0]
        rewards = -self.x ** 2
        self.ret += rewards
        self.t += 1
        dones = self.t >= self.horizon
        infos = [{} for _ in range(self.num_envs)]
        for i in np.flatnonzero(dones):
            infos[i]['episode'] = {'return': float(self.ret[i]), 'length': int(self.t[i])}
            self.x[i] = self.rng.uniform(-1.0, 1.0)
            self.t[i] = 0
            self.ret[i] = 0.0
        obs, priv = self._obs()
        return obs, priv, rewards, dones.astype(np.float64), infos


def train_toy(updates=200, seed=0, num_envs=32, config: Optional[LearnConfig] = None):
    """Mean episode return after each PPO update on the toy task."""
    config = config or LearnConfig(
        rollout_steps=16, minibatch_size=128, mini_epochs=4, lr=3e-3, policy_units=(32, 32),
        normalize_obs=False,
    )
    env = LinearToyEnv(num_envs=num_envs, seed=seed)
    net = PolicyNet(obs_dim=1, action_dim=1, encoder=None, policy_units=config.policy_units, seed=seed)
    rng = np.random.default_rng(seed)
    collector = RolloutCollector(env, net, rng, action_scale=1.0, normalize=config.normalize_obs)
    optimizer = Adam(net.params, lr=config.lr)
    history = []
    last = math.nan
    for _ in range(updates):
        batch, episodes = collector.collect(config.rollout_steps)
        ppo_update(net, optimizer, batch, config, rng)
        if episodes:
            last = float(np.mean([e['return'] for e in episodes]))
        history.append(last)
    return np.array(history)


# ============================================================================
# TEACHER TRAINING
# ============================================================================

def make_teacher(config: RunConfig, obs_dim, seed=None):
    learn = config.learn
    return PolicyNet(
        obs_dim=obs_dim, encoder='mlp', priv_dim=PRIVILEGED_DIM, encoder_units=learn.encoder_units,
        policy_units=learn.policy_units, seed=config.seed if seed is None else seed,
    )


def train_teacher(config: RunConfig, grasp_bank=None, net: Optional[PolicyNet] = None):
    """PPO with the reward curriculum; returns (net, normalizer, training curve)."""
    learn = config.learn
    curriculum = CurriculumTracker(learn.curriculum)
    env = VectorEnv(config, learn.num_envs, seed=config.seed, grasp_bank=grasp_bank, curriculum=curriculum)
    net = net or make_teacher(config, env.obs_dim)
    rng = np.random.default_rng(config.seed)
    collector = RolloutCollector(env, net, rng, normalize=learn.normalize_obs)
    optimizer = Adam(net.params, lr=learn.lr)
    per_iteration = learn.num_envs * learn.rollout_steps
    iterations = max(learn.total_steps // per_iteration, 1)
    rows = []
    logger.info(f"Training teacher for {iterations} iterations ({per_iteration} steps each)")
    try:
        for iteration in range(iterations):
            batch, episodes = collector.collect(learn.rollout_steps)
            update = ppo_update(net, optimizer, batch, learn, rng)
            row = {
                'iteration': iteration,
                'env_steps': (iteration + 1) * per_iteration,
                'mean_return': np.mean([e['return'] for e in episodes]) if episodes else math.nan,
                'mean_goals': np.mean([e['goals'] for e in episodes]) if episodes else math.nan,
                'mean_rotations': np.mean([e['rotations'] for e in episodes]) if episodes else math.nan,
                'lambda_rew': curriculum.lambda_rew,
                'approx_kl': update['approx_kl'],
                'policy_loss': update['policy_loss'],
                'value_loss': update['value_loss'],
                'learning_rate': update['learning_rate'],
            }
            rows.append(row)
            if episodes:
                logger.info(
                    f"iter {iteration}: return {row['mean_return']:.3f} goals {row['mean_goals']:.2f} "
                    f"rot {row['mean_rotations']:.3f} lambda {row['lambda_rew']:.2f} kl {row['approx_kl']:.4f}"
                )
    finally:
        env.close()
    return net, collector.normalizer, pd.DataFrame(rows, columns=TRAINING_CURVE_COLUMNS)
