"""
Reward engine and reward curriculum.

total = w_kp r_kp + w_rot r_rot + w_goal r_goal
        + lambda_rew (w_gc r_gc - w_bc r_bc + w_omega r_omega + w_pose r_pose
                      + w_work r_work + w_torque r_torque)
        + w_penalty r_penalty

The alternative form swaps the keypoint and goal terms for an angular
velocity term and adds an axis-alignment penalty to the scaled block.
Every term function accepts arrays so a batch of contexts is scored at once.
"""
import threading
from typing import Optional

import numpy as np
from pydantic import Field

from classes import ArrayModel, FloatArray, RewardBreakdown
from constants import VALIDATION_ERRORS
from errors import InputDomainError
from settings import CurriculumConfig, RewardConfig


class RewardContext(ArrayModel):
    """Per-step quantities the reward reads; array fields may carry a leading batch axis."""

    kp_dist: FloatArray
    dtheta_k: FloatArray
    tolerance: float
    tip_contacts: FloatArray
    non_tip_contacts: FloatArray
    angvel: FloatArray
    axis: FloatArray
    q: FloatArray
    q0: FloatArray
    torques: FloatArray
    dq_target: FloatArray
    q_target: FloatArray
    terminated: FloatArray
    # net rotation axis of the object, zero when it is at rest
    object_axis: Optional[FloatArray] = None
    lambda_rew: FloatArray = Field(default_factory=lambda: np.array(1.0))


def reward_kp(d, a=50.0, b=2.0):
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise InputDomainError(VALIDATION_ERRORS['NEGATIVE_DISTANCE'].format(value=d))
    x = np.minimum(a * d, 700.0)
    value = 1.0 / (np.exp(x) + b + np.exp(-x))
    return float(value) if value.ndim == 0 else value


def reward_rot(dtheta_k, clip=0.025):
    value = np.clip(dtheta_k, -clip, clip)
    return float(value) if np.ndim(value) == 0 else value


def _row_norm(x):
    return np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1)


def _row_dot(a, b):
    return np.sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64), axis=-1)


def _shared_terms(ctx: RewardContext, cfg: RewardConfig):
    speed = _row_norm(ctx.angvel)
    if cfg.omega_form == 'literal':
        r_omega = -np.minimum(speed - cfg.omega_max, 0.0)
    else:
        r_omega = -np.maximum(speed - cfg.omega_max, 0.0)
    work_delta = ctx.dq_target if cfg.work_form == 'delta' else ctx.q_target
    return {
        'r_rot': np.clip(ctx.dtheta_k, -cfg.rot_clip, cfg.rot_clip),
        'r_gc': (np.asarray(ctx.tip_contacts) >= cfg.good_contact_min_tips).astype(np.float64),
        'r_bc': (np.asarray(ctx.non_tip_contacts) > 0).astype(np.float64),
        'r_omega': r_omega,
        'r_pose': -_row_norm(np.asarray(ctx.q) - np.asarray(ctx.q0)),
        'r_work': -_row_dot(ctx.torques, work_delta),
        'r_torque': -_row_norm(ctx.torques),
        'r_penalty': -np.asarray(ctx.terminated, dtype=np.float64),
    }


def _check_lambda(lam):
    lam = np.asarray(lam, dtype=np.float64)
    if np.any((lam < 0) | (lam > 1)):
        raise InputDomainError(VALIDATION_ERRORS['LAMBDA_RANGE'].format(value=lam))
    return lam


def reward_terms(ctx: RewardContext, cfg: Optional[RewardConfig] = None):
    """Base reward terms and total as arrays."""
    cfg = cfg or RewardConfig()
    w = cfg.weights
    lam = _check_lambda(ctx.lambda_rew)
    terms = _shared_terms(ctx, cfg)
    x = np.minimum(cfg.kp_a * np.asarray(ctx.kp_dist), 700.0)
    terms['r_kp'] = 1.0 / (np.exp(x) + cfg.kp_b + np.exp(-x))
    terms['r_goal'] = (np.asarray(ctx.kp_dist) < ctx.tolerance).astype(np.float64)
    terms['r_av'] = np.zeros_like(terms['r_rot'])
    terms['r_axis'] = np.zeros_like(terms['r_rot'])
    stable = (
        w['gc'] * terms['r_gc'] - w['bc'] * terms['r_bc'] + w['omega'] * terms['r_omega']
        + w['pose'] * terms['r_pose'] + w['work'] * terms['r_work'] + w['torque'] * terms['r_torque']
    )
    terms['total'] = (
        w['kp'] * terms['r_kp'] + w['rot'] * terms['r_rot'] + w['goal'] * terms['r_goal']
        + lam * stable + w['penalty'] * terms['r_penalty']
    )
    terms['lambda_rew'] = lam * np.ones_like(terms['total'])
    return terms


def reward_terms_alt(ctx: RewardContext, cfg: Optional[RewardConfig] = None):
    """Angular-velocity reward with the axis-alignment penalty."""
    cfg = cfg or RewardConfig()
    w = cfg.weights
    alt = cfg.alt_weights
    lam = _check_lambda(ctx.lambda_rew)
    terms = _shared_terms(ctx, cfg)
    terms['r_av'] = np.clip(_row_dot(ctx.angvel, ctx.axis), -cfg.angvel_clip, cfg.angvel_clip)
    if ctx.object_axis is None:
        cosine = np.ones_like(terms['r_rot'])
    else:
        object_axis = np.asarray(ctx.object_axis, dtype=np.float64)
        at_rest = _row_norm(object_axis) == 0.0
        cosine = np.where(at_rest, 1.0, _row_dot(object_axis, ctx.axis))
    terms['r_axis'] = -(1.0 - cosine)
    terms['r_kp'] = np.zeros_like(terms['r_rot'])
    terms['r_goal'] = np.zeros_like(terms['r_rot'])
    stable = (
        w['gc'] * terms['r_gc'] - w['bc'] * terms['r_bc'] + alt['omega'] * terms['r_omega']
        + w['pose'] * terms['r_pose'] + w['work'] * terms['r_work'] + w['torque'] * terms['r_torque']
        + alt['axis'] * terms['r_axis']
    )
    terms['total'] = (
        alt['av'] * terms['r_av'] + w['rot'] * terms['r_rot'] + lam * stable + w['penalty'] * terms['r_penalty']
    )
    terms['lambda_rew'] = lam * np.ones_like(terms['total'])
    return terms


def _breakdown(terms):
    return RewardBreakdown(**{key: float(np.asarray(value)) for key, value in terms.items()})


def compute_reward(ctx: RewardContext, cfg: Optional[RewardConfig] = None) -> RewardBreakdown:
    return _breakdown(reward_terms(ctx, cfg))


def compute_reward_alt(ctx: RewardContext, cfg: Optional[RewardConfig] = None) -> RewardBreakdown:
    return _breakdown(reward_terms_alt(ctx, cfg))


def recompose_total(breakdown: RewardBreakdown, cfg: Optional[RewardConfig] = None):
    """Total rebuilt from the stored parts of a base-form breakdown."""
    cfg = cfg or RewardConfig()
    w = cfg.weights
    b = breakdown
    stable = (
        w['gc'] * b.r_gc - w['bc'] * b.r_bc + w['omega'] * b.r_omega + w['pose'] * b.r_pose
        + w['work'] * b.r_work + w['torque'] * b.r_torque
    )
    return (w['kp'] * b.r_kp + w['rot'] * b.r_rot + w['goal'] * b.r_goal
            + b.lambda_rew * stable + w['penalty'] * b.r_penalty)


# ============================================================================
# CURRICULUM
# ============================================================================

def curriculum_coefficient(g_eval, g_min=1.0, g_max=2.0):
    if g_eval < 0:
        raise InputDomainError(f'mean successive goals must be non-negative (got {g_eval})')
    return float(np.clip((g_eval - g_min) / (g_max - g_min), 0.0, 1.0))


class CurriculumTracker:
    """Moving average of successive goals per finished episode, shared by all environments."""

    def __init__(self, config: Optional[CurriculumConfig] = None):
        self.config = config or CurriculumConfig()
        self.g_eval = 0.0
        self.episodes = 0
        self._lock = threading.Lock()

    def update(self, goal_counts):
        with self._lock:
            for count in goal_counts:
                self.g_eval = (1.0 - self.config.ema) * self.g_eval + self.config.ema * float(count)
                self.episodes += 1

    @property
    def lambda_rew(self):
        if not self.config.enabled:
            return 1.0
        with self._lock:
            return curriculum_coefficient(self.g_eval, self.config.goal_min, self.config.goal_max)
