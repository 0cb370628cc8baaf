"""
Teacher-to-student distillation.

The student sees only an observation history. Its TCN latent is regressed
onto the teacher's privileged latent and its action distribution is fit to
the teacher's action mean by negative log-likelihood. The trunk, heads and
log-std start as a copy of the teacher's; the log-std stays frozen so the
action term has a fixed floor.
"""
import logging
import math

import numpy as np
import pandas as pd

from constants import CLI_MESSAGES, tcn_kernels, tcn_strides
from envcore import VectorEnv
from networks import Adam, PolicyNet, RunningMeanStd, copy_trunk, encode, net_forward, net_gradient
from settings import RunConfig

logger = logging.getLogger(__name__)

DISTILL_CURVE_COLUMNS = [
    'iteration', 'env_steps', 'mse', 'nll', 'nll_excess', 'holdout_mse', 'holdout_nll_excess', 'holdout_total',
]


def pad_history(window, length):
    """Last ``length`` observations, left-padded with the earliest one."""
    window = np.asarray(window, dtype=np.float64)
    if len(window) >= length:
        return window[-length:]
    pad = np.repeat(window[:1], length - len(window), axis=0)
    return np.concatenate([pad, window], axis=0)


class HistoryBuffer:
    """Per-environment observation windows refilled on episode reset."""

    def __init__(self, num_envs, length, obs_dim):
        self.window = np.zeros((num_envs, length, obs_dim))

    def reset(self, obs, mask=None):
        obs = np.asarray(obs, dtype=np.float64)
        mask = np.ones(len(obs), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        self.window[mask] = obs[mask][:, None, :]

    def push(self, obs, reset_mask=None):
        self.window = np.roll(self.window, -1, axis=1)
        self.window[:, -1] = obs
        if reset_mask is not None and np.any(reset_mask):
            self.reset(obs, reset_mask)
        return self.window.copy()


def make_student(teacher: PolicyNet, history, seed=0):
    student = PolicyNet(
        obs_dim=teacher.obs_dim, action_dim=teacher.action_dim, encoder='tcn',
        policy_units=teacher.policy_units, history=history, latent=teacher.latent,
        kernels=tcn_kernels, strides=tcn_strides, seed=seed,
    )
    return copy_trunk(teacher, student)


def nll_floor(net: PolicyNet):
    return float(np.sum(net.params['log_std']) + 0.5 * net.action_dim * math.log(2.0 * math.pi))


def teacher_targets(teacher: PolicyNet, teacher_inputs):
    """Latent and action-mean targets from the frozen teacher."""
    mean, _, _ = net_forward(teacher, teacher_inputs)
    return encode(teacher, teacher_inputs), mean


def distill_step(student: PolicyNet, teacher: PolicyNet, batch, optimizer: Adam = None, max_norm=None):
    """One distillation step on ``batch`` (history + teacher_inputs); returns (mse, nll)."""
    latent, actions = teacher_targets(teacher, batch['teacher_inputs'])
    _, grads, stats = net_gradient(student, 'distill', {
        'inputs': batch['history'], 'actions': actions, 'latent': latent,
    })
    if optimizer is not None:
        keys = [key for key in grads if key != 'log_std']
        optimizer.step(student.params, grads, max_norm=max_norm, keys=keys)
    return stats['mse'], stats['nll']


def distill_losses(student: PolicyNet, teacher: PolicyNet, batch):
    """(mse, nll, nll_excess) without updating the student."""
    latent, actions = teacher_targets(teacher, batch['teacher_inputs'])
    z = encode(student, batch['history'])
    mean, log_std, _ = net_forward(student, batch['history'])
    nll = 0.5 * np.sum(((actions - mean) * np.exp(-log_std)) ** 2, axis=-1)
    mse = float(np.mean((z - latent) ** 2))
    excess = float(np.mean(nll))
    return mse, excess + nll_floor(student), excess


# ============================================================================
# DATA COLLECTION AND TRAINING
# ============================================================================

class TeacherCollector:
    """Teacher-driven transitions as {'history', 'teacher_inputs'} arrays.

    Episodes persist across ``collect`` calls; environments reset only at
    construction and through the done mask.
    """

    def __init__(self, env, teacher: PolicyNet, normalizer: RunningMeanStd, history, action_scale):
        self.env = env
        self.teacher = teacher
        self.normalizer = normalizer
        self.action_scale = action_scale
        obs, priv = env.reset()
        self.x = normalizer.normalize(np.concatenate([obs, priv], axis=-1))
        self.buffer = HistoryBuffer(len(obs), history, teacher.obs_dim)
        self.buffer.reset(self.x[:, :teacher.obs_dim])

    def collect(self, steps):
        obs_dim = self.teacher.obs_dim
        histories, inputs = [], []
        for _ in range(steps):
            histories.append(self.buffer.window.copy())
            inputs.append(self.x)
            mean, _, _ = net_forward(self.teacher, self.x)
            obs, priv, _, dones, _ = self.env.step(np.clip(mean, -1.0, 1.0) * self.action_scale)
            self.x = self.normalizer.normalize(np.concatenate([obs, priv], axis=-1))
            self.buffer.push(self.x[:, :obs_dim], reset_mask=dones > 0)
        return {
            'history': np.concatenate(histories, axis=0),
            'teacher_inputs': np.concatenate(inputs, axis=0),
        }


def train_on_batch(student, teacher, data, optimizer, rng, epochs=1, minibatch=512, max_norm=None):
    n = len(data['history'])
    mses, nlls = [], []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            idx = order[start:start + minibatch]
            mse, nll = distill_step(
                student, teacher, {key: value[idx] for key, value in data.items()}, optimizer, max_norm,
            )
            mses.append(mse)
            nlls.append(nll)
    return float(np.mean(mses)), float(np.mean(nlls))


def train_student(config: RunConfig, teacher: PolicyNet, normalizer: RunningMeanStd, grasp_bank=None):
    """Distill on teacher rollouts under the relaxed goal tolerance; returns (student, curve).

    Curve row 0 is the held-out loss of the untrained student.
    """
    distill = config.distill
    if math.isclose(distill.goal_tolerance, config.env.goal_tolerance):
        logger.warning(CLI_MESSAGES['TOLERANCE_WARNING'].format(tol=distill.goal_tolerance))
    student_config = config.model_copy(update={
        'env': config.env.model_copy(update={'goal_tolerance': distill.goal_tolerance}),
    })
    action_scale = config.env.action_clip
    student = make_student(teacher, distill.history, seed=config.seed)
    optimizer = Adam(student.params, lr=distill.lr)
    rng = np.random.default_rng(config.seed)

    holdout_env = VectorEnv(student_config, distill.num_envs, seed=config.seed + 1, grasp_bank=grasp_bank)
    env = VectorEnv(student_config, distill.num_envs, seed=config.seed, grasp_bank=grasp_bank)
    rows = []
    try:
        holdout = TeacherCollector(holdout_env, teacher, normalizer, distill.history, action_scale).collect(
            max(distill.holdout_steps // distill.num_envs, 1),
        )
        collector = TeacherCollector(env, teacher, normalizer, distill.history, action_scale)
        h_mse, _, h_excess = distill_losses(student, teacher, holdout)
        logger.info(f"Initial held-out loss: mse {h_mse:.5f} nll excess {h_excess:.5f}")
        # row 0 is the untrained student; training columns are empty there
        rows.append({
            'iteration': 0, 'env_steps': 0, 'mse': math.nan, 'nll': math.nan, 'nll_excess': math.nan,
            'holdout_mse': h_mse, 'holdout_nll_excess': h_excess, 'holdout_total': h_mse + h_excess,
        })
        per_iteration = distill.num_envs * distill.rollout_steps
        iterations = max(distill.total_steps // per_iteration, 1)
        for iteration in range(1, iterations + 1):
            data = collector.collect(distill.rollout_steps)
            mse, nll = train_on_batch(student, teacher, data, optimizer, rng, distill.mini_epochs,
                                      config.learn.minibatch_size, config.learn.grad_norm)
            h_mse, _, h_excess = distill_losses(student, teacher, holdout)
            rows.append({
                'iteration': iteration, 'env_steps': iteration * per_iteration, 'mse': mse, 'nll': nll,
                'nll_excess': nll - nll_floor(student), 'holdout_mse': h_mse, 'holdout_nll_excess': h_excess,
                'holdout_total': h_mse + h_excess,
            })
            logger.info(f"distill iter {iteration}: mse {mse:.5f} nll {nll:.4f} held-out {h_mse + h_excess:.5f}")
    finally:
        env.close()
        holdout_env.close()
    return student, pd.DataFrame(rows, columns=DISTILL_CURVE_COLUMNS)
