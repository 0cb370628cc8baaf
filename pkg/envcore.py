"""
Goal-conditioned in-hand rotation environment.

Observation channel order: q, q_target, a_prev, fingertip positions,
fingertip orientations, contact flags, contact pose, contact force, axis.
Tactile modes drop channels from the tail group:
    dense 95, dense_pose 91 (no force), dense_force 87 (no pose),
    binary 83 (flags only), proprio 79 (no touch).
"""
import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from classes import GoalSpec, GraspEntry, HandObjectState, Pose, Quaternion, RewardBreakdown, TactileFrame
from constants import (
    REWARD_TERM_COLUMNS, RUNTIME_ERRORS, VALIDATION_ERRORS, action_clip, action_ema_eta, axis_rest_epsilon,
    control_hz, fall_distance, max_axis_deviation_deg, num_fingers, num_joints,
)
from errors import EnvironmentDoneError, InputDomainError
from handsim import PenaltyBackend, apply_disturbance, fingertip_arrays, initial_state
from randomization import gravity_vector, sample_env_params
from rewards import CurriculumTracker, RewardContext, reward_terms, reward_terms_alt
from rotmath import (
    axis_deviation_array, delta_rotation_array, net_rotation_axis, pose_keypoint_distance, quat_normalize,
    rotate_about_axis,
)
from settings import RunConfig
from tactile import assemble_tactile, raw_contacts_from_records

logger = logging.getLogger(__name__)

PROPRIO_DIM = 3 * num_joints + 3 * num_fingers + 4 * num_fingers + 3
PRIVILEGED_DIM = 26

TACTILE_CHANNELS = {
    'dense': ('contact', 'pose', 'force'),
    'dense_pose': ('contact', 'pose'),
    'dense_force': ('contact', 'force'),
    'binary': ('contact',),
    'proprio': (),
}

_CHANNEL_SIZES = {'contact': num_fingers, 'pose': 2 * num_fingers, 'force': num_fingers}


def observation_size(mode):
    if mode not in TACTILE_CHANNELS:
        raise InputDomainError(VALIDATION_ERRORS['UNKNOWN_MODE'].format(kind='tactile', mode=mode))
    return PROPRIO_DIM + sum(_CHANNEL_SIZES[channel] for channel in TACTILE_CHANNELS[mode])


# ============================================================================
# STEP PIECES
# ============================================================================

def process_action(a_raw, a_prev, q_target_prev, lower=None, upper=None, clip=action_clip, eta=action_ema_eta):
    """Clip, smooth and integrate a relative joint action; returns (smoothed action, new target)."""
    a = np.clip(np.asarray(a_raw, dtype=np.float64), -clip, clip)
    smoothed = eta * a + (1.0 - eta) * np.asarray(a_prev, dtype=np.float64)
    target = np.asarray(q_target_prev, dtype=np.float64) + smoothed
    if lower is not None and upper is not None:
        target = np.clip(target, lower, upper)
    return smoothed, target


def next_goal(current_orientation, goal: GoalSpec) -> GoalSpec:
    orientation = rotate_about_axis(current_orientation, goal.axis, goal.increment)
    return goal.model_copy(update={
        'pose': Pose(position=goal.pose.position.copy(), orientation=orientation),
        'count': goal.count + 1,
    })


def termination_cause(kp_dist, deviation, fall=fall_distance, max_deviation=math.radians(max_axis_deviation_deg)):
    if kp_dist > fall:
        return 'fell'
    if deviation > max_deviation:
        return 'axis_deviated'
    return 'continue'


def check_termination(state: HandObjectState, goal: GoalSpec, axis_window, fall=fall_distance,
                      max_deviation_deg=max_axis_deviation_deg, epsilon=axis_rest_epsilon):
    kp_dist = pose_keypoint_distance(
        state.object_position, state.object_quat, goal.pose.position, goal.pose.orientation.as_array(),
    )
    window = np.asarray(axis_window, dtype=np.float64)
    deviation = axis_deviation_array(window, goal.axis.as_array(), epsilon) if len(window) >= 2 else 0.0
    return termination_cause(kp_dist, deviation, fall, math.radians(max_deviation_deg))


def hold_position(hand, q=None):
    tips, _ = fingertip_arrays(hand, hand.q0 if q is None else q)
    return np.array([0.0, 0.0, float(np.mean(tips[:, 2]))])


# ============================================================================
# ENVIRONMENT
# ============================================================================

class RotateEnv:
    def __init__(self, config: Optional[RunConfig] = None, seed=0, grasp_bank: Optional[List[GraspEntry]] = None,
                 curriculum: Optional[CurriculumTracker] = None, backend=None, object_set=None, record=False):
        self.config = config or RunConfig()
        self.env_cfg = self.config.env
        self.rng = np.random.default_rng(seed)
        self.grasp_bank = grasp_bank or []
        self.curriculum = curriculum
        self.backend = backend or PenaltyBackend()
        self.object_set = object_set
        self.record = record
        self.mode = self.config.tactile.mode
        self.obs_dim = observation_size(self.mode)
        self.done = True
        self.log_rows = []
        if not self.grasp_bank:
            logger.warning("No grasp bank supplied; episodes start from the canonical pose")

    # ------------------------------------------------------------------
    def reset(self, params=None):
        cfg = self.env_cfg
        self.params = params or sample_env_params(
            self.rng, self.config.randomization, cfg, self.object_set, self.config.tactile,
        )
        base = self.config.hand
        self.hand = base.model_copy(update={
            'stiffness': base.stiffness * self.params.stiffness_scale,
            'damping': base.damping * self.params.damping_scale,
        })
        sampled = self.params.object
        if self.grasp_bank:
            entry = self.grasp_bank[int(self.rng.integers(len(self.grasp_bank)))]
            self.obj = entry.object.model_copy(update={
                'mass': sampled.mass, 'com': sampled.com, 'friction': self.params.friction,
            })
            q, position, quat = entry.q, entry.position, entry.orientation
        else:
            self.obj = sampled
            q, position, quat = base.q0, hold_position(base), np.array([1.0, 0.0, 0.0, 0.0])

        self.time = 0.0
        self.state = initial_state(self.hand, q, position, quat, gravity_vector(self.params.gravity, 0.0))
        self.axis = self.params.axis.as_array()
        start = GoalSpec(
            axis=self.params.axis,
            pose=Pose(position=np.asarray(position, dtype=np.float64), orientation=Quaternion.from_array(quat)),
            increment=math.radians(cfg.goal_increment_deg),
            tolerance=cfg.tolerance_m,
        )
        self.goal = next_goal(Quaternion.from_array(quat), start).model_copy(update={'count': 0})
        self.a_prev = np.zeros(num_joints)
        self.tactile = TactileFrame()
        self.window = deque([self.state.object_quat.copy()], maxlen=cfg.axis_window)
        self.steps = 0
        self.rotation = 0.0
        self.episode_return = 0.0
        self.done = False
        self.log_rows = []
        self.state = self.state.model_copy(update={
            'contacts': self.backend.detect_contacts(self.hand, self.state, self.obj),
        })
        self._update_tactile(noise=False)
        return self.observation(), self.privileged()

    # ------------------------------------------------------------------
    def _update_tactile(self, noise=True):
        raw = raw_contacts_from_records(self.state.contacts)
        rng = self.rng if noise and (self.params.pose_noise > 0 or self.params.force_noise > 0) else None
        self.tactile = assemble_tactile(
            raw, self.tactile, rng, self.params.pose_noise, self.params.force_noise, self.hand.fingertip_radius,
        )

    def observation(self):
        p = self.params
        q = self.state.q + self.rng.normal(0.0, p.joint_noise, num_joints) if p.joint_noise > 0 else self.state.q
        tips, quats = fingertip_arrays(self.hand, self.state.q)
        if p.fingertip_position_noise > 0:
            tips = tips + self.rng.normal(0.0, p.fingertip_position_noise, tips.shape)
        if p.fingertip_orientation_noise > 0:
            quats = quat_normalize(quats + self.rng.normal(0.0, p.fingertip_orientation_noise, quats.shape))
        parts = [q, self.state.q_target, self.a_prev, tips.ravel(), quats.ravel()]
        channels = TACTILE_CHANNELS[self.mode]
        if 'contact' in channels:
            parts.append(self.tactile.contact)
        if 'pose' in channels:
            parts.append(self.tactile.pose.ravel())
        if 'force' in channels:
            parts.append(self.tactile.force)
        parts.append(self.axis)
        return np.concatenate(parts)

    def privileged(self):
        obj = self.obj
        gravity = self.state.gravity
        return np.concatenate([
            self.state.object_position,
            self.state.object_quat,
            self.state.object_angvel,
            np.asarray(obj.dimensions, dtype=np.float64),
            obj.com,
            [obj.mass],
            gravity / max(np.linalg.norm(gravity), 1e-12),
            self.goal.pose.position,
            self.goal.pose.orientation.as_array(),
        ])

    # ------------------------------------------------------------------
    def step(self, action):
        if self.done:
            raise EnvironmentDoneError(RUNTIME_ERRORS['ENV_DONE'])
        cfg = self.env_cfg
        prev_target = self.state.q_target
        prev_quat = self.state.object_quat.copy()
        smoothed, target = process_action(
            action, self.a_prev, prev_target, self.hand.joint_lower, self.hand.joint_upper,
            cfg.action_clip, cfg.action_eta,
        )

        state = self.state.model_copy(update={'q_target': target})
        state = state.model_copy(update={'disturbance': apply_disturbance(state, self.rng, self.params)})
        applied = np.zeros(num_joints)
        for _ in range(cfg.substeps):
            state = state.model_copy(update={'gravity': gravity_vector(self.params.gravity, self.time)})
            state = self.backend.step(self.hand, state, self.obj, dt=cfg.physics_dt)
            applied += state.applied_torque / cfg.substeps
            self.time += cfg.physics_dt
        self.state = state
        self.a_prev = smoothed
        self._update_tactile()

        quat = state.object_quat
        kp_dist = pose_keypoint_distance(
            state.object_position, quat, self.goal.pose.position, self.goal.pose.orientation.as_array(),
        )
        dtheta = delta_rotation_array(prev_quat, quat, self.axis)
        self.rotation += dtheta
        self.window.append(quat.copy())
        deviation = 0.0
        if len(self.window) == self.window.maxlen:
            deviation = axis_deviation_array(np.stack(self.window), self.axis, cfg.axis_rest_epsilon)
        cause = termination_cause(kp_dist, deviation, cfg.fall_distance, math.radians(cfg.max_axis_deviation_deg))
        terminated = cause != 'continue'

        reached = kp_dist < self.goal.tolerance
        tips = state.tip_contacts()
        object_axis = net_rotation_axis(np.stack(self.window), cfg.axis_rest_epsilon) if len(self.window) >= 2 else None
        ctx = RewardContext(
            kp_dist=kp_dist, dtheta_k=dtheta, tolerance=self.goal.tolerance,
            tip_contacts=len({c.finger for c in tips}), non_tip_contacts=len(state.non_tip_contacts()),
            angvel=state.object_angvel, axis=self.axis, q=state.q, q0=self.hand.q0, torques=applied,
            dq_target=target - prev_target, q_target=target, terminated=float(terminated),
            object_axis=np.zeros(3) if object_axis is None else object_axis,
            lambda_rew=self.curriculum.lambda_rew if self.curriculum is not None else 1.0,
        )
        terms = (reward_terms_alt if self.config.reward.form == 'alt' else reward_terms)(ctx, self.config.reward)
        breakdown = RewardBreakdown(**{key: float(value) for key, value in terms.items()})

        if reached:
            self.goal = next_goal(Quaternion.from_array(quat), self.goal)

        self.steps += 1
        self.episode_return += breakdown.total
        if not terminated and self.steps >= cfg.max_steps:
            cause = 'timeout'
        self.done = cause != 'continue'

        info = {
            'kp_dist': kp_dist, 'dtheta_k': dtheta, 'goal_reached': bool(reached), 'goals': self.goal.count,
            'cause': cause, 'deviation': deviation, 'tip_contacts': ctx.tip_contacts.item(),
            'non_tip_contacts': ctx.non_tip_contacts.item(), 'time': self.steps / control_hz,
            'rotations': self.rotation / (2.0 * math.pi),
        }
        if self.record:
            self.log_rows.append(self._log_row(info, breakdown))
        if self.done:
            info['episode'] = {
                'return': self.episode_return, 'goals': self.goal.count, 'rotations': info['rotations'],
                'length': self.steps, 'cause': cause,
            }
            if self.curriculum is not None:
                self.curriculum.update([self.goal.count])
        return self.observation(), self.privileged(), breakdown, self.done, info

    def _log_row(self, info, breakdown):
        row = {'step': self.steps, 'time': info['time']}
        row.update({k: info[k] for k in ('kp_dist', 'dtheta_k', 'goals', 'cause', 'deviation',
                                         'tip_contacts', 'non_tip_contacts')})
        row.update({key: getattr(breakdown, key) for key in REWARD_TERM_COLUMNS})
        frame = self.tactile
        for i in range(num_fingers):
            row[f'c{i + 1}'] = float(frame.contact[i])
            row[f'Rx{i + 1}'] = float(frame.pose[i, 0])
            row[f'Ry{i + 1}'] = float(frame.pose[i, 1])
            row[f'F{i + 1}'] = float(frame.force[i])
        return row


# ============================================================================
# VECTORIZED DRIVER
# ============================================================================

class VectorEnv:
    """Independent environments stepped together, reset automatically when finished."""

    def __init__(self, config: RunConfig, num_envs, seed=0, grasp_bank=None, curriculum=None, threads=None,
                 object_set=None):
        seeds = np.random.SeedSequence(seed).spawn(num_envs)
        self.envs = [
            RotateEnv(config, seed=s, grasp_bank=grasp_bank, curriculum=curriculum, object_set=object_set)
            for s in seeds
        ]
        self.num_envs = num_envs
        self.obs_dim = self.envs[0].obs_dim
        threads = threads or config.threads
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def _map(self, fn, *args):
        if self._pool is None:
            return list(map(fn, *args))
        return list(self._pool.map(fn, *args))

    def reset(self):
        results = self._map(lambda env: env.reset(), self.envs)
        return np.stack([r[0] for r in results]), np.stack([r[1] for r in results])

    def step(self, actions):
        def advance(env, action):
            obs, priv, breakdown, done, info = env.step(action)
            if done:
                obs, priv = env.reset()
            return obs, priv, breakdown.total, done, info

        results = self._map(advance, self.envs, list(np.asarray(actions)))
        obs = np.stack([r[0] for r in results])
        priv = np.stack([r[1] for r in results])
        rewards = np.array([r[2] for r in results])
        dones = np.array([r[3] for r in results], dtype=np.float64)
        infos = [r[4] for r in results]
        return obs, priv, rewards, dones, infos

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
