"""
Episode logs, rotation count (Rot) and time to terminate (TTT), and the
evaluation grid over hand orientations, rotation axes and object sets.
"""
import logging
import math
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from classes import EpisodeMetrics, EvalSummary
from constants import EPISODE_COLUMNS, TERMINATION_CAUSES, VALIDATION_ERRORS, control_hz, num_joints, stuck_seconds
from distillation import pad_history
from envcore import RotateEnv
from errors import InputDomainError
from networks import PolicyNet, RunningMeanStd, net_forward
from randomization import rotating_trajectories
from settings import RunConfig

logger = logging.getLogger(__name__)


class EpisodeLog:
    """Per-step records of one episode plus its evaluation cell."""

    def __init__(self, rows=None, episode=0, orientation='palm_up', axis='+z', object_set='train'):
        self.rows = list(rows or [])
        self.episode = episode
        self.orientation = orientation
        self.axis = axis
        self.object_set = object_set

    @property
    def cause(self):
        return self.rows[-1]['cause'] if self.rows else 'continue'

    def dtheta(self):
        return np.array([row['dtheta_k'] for row in self.rows], dtype=np.float64)

    def goal_steps(self):
        """Control steps (1-based) at which a goal was reached."""
        steps, previous = [], 0
        for row in self.rows:
            if row['goals'] > previous:
                steps.append(row['step'])
            previous = row['goals']
        return steps

    def to_records(self):
        meta = {'episode': self.episode, 'orientation': self.orientation, 'axis': self.axis,
                'object_set': self.object_set}
        return [{**meta, **row} for row in self.rows]

    def to_frame(self):
        return pd.DataFrame(self.to_records())

    @classmethod
    def from_records(cls, records):
        """Group flat JSONL records back into logs, one per episode."""
        logs = {}
        for record in records:
            key = (record['episode'], record['orientation'], record['axis'], record['object_set'])
            if key not in logs:
                logs[key] = cls(episode=key[0], orientation=key[1], axis=key[2], object_set=key[3])
            row = {k: v for k, v in record.items() if k not in ('episode', 'orientation', 'axis', 'object_set')}
            if row.get('cause', 'continue') not in TERMINATION_CAUSES:
                raise InputDomainError(VALIDATION_ERRORS['UNKNOWN_CAUSE'].format(cause=row['cause']))
            logs[key].rows.append(row)
        return list(logs.values())


def time_to_terminate(steps, goal_steps, hz=control_hz, stuck_after=stuck_seconds):
    """Seconds until the object fell, the axis deviated, or no goal was reached for ``stuck_after`` seconds."""
    end = steps / hz
    last_goal = 0.0
    for step in list(goal_steps) + [None]:
        t = end if step is None else step / hz
        if t - last_goal >= stuck_after and last_goal + stuck_after < end:
            return last_goal + stuck_after
        if step is not None:
            last_goal = t
    return end


def rotation_count(dtheta, upto_steps=None):
    dtheta = np.asarray(dtheta, dtype=np.float64)
    if upto_steps is not None:
        dtheta = dtheta[:upto_steps]
    return float(np.sum(dtheta) / (2.0 * math.pi))


def episode_metrics(log: EpisodeLog, hz=control_hz, stuck_after=stuck_seconds) -> EpisodeMetrics:
    steps = len(log.rows)
    ttt = time_to_terminate(steps, log.goal_steps(), hz, stuck_after)
    rot = rotation_count(log.dtheta(), int(round(ttt * hz)))
    goals = log.rows[-1]['goals'] if log.rows else 0
    return EpisodeMetrics(
        episode=log.episode, orientation=log.orientation, axis=log.axis, object_set=log.object_set,
        rotations=rot, ttt=ttt, cause=log.cause, goals=goals,
    )


def summarize(episodes: List[EpisodeMetrics]) -> EvalSummary:
    if not episodes:
        return EvalSummary()
    rot = np.array([e.rotations for e in episodes])
    ttt = np.array([e.ttt for e in episodes])
    return EvalSummary(
        episodes=episodes, rotations_mean=float(rot.mean()), rotations_std=float(rot.std()),
        ttt_mean=float(ttt.mean()), ttt_std=float(ttt.std()),
        goals_mean=float(np.mean([e.goals for e in episodes])),
    )


def episodes_frame(episodes: List[EpisodeMetrics]):
    return pd.DataFrame([e.model_dump() for e in episodes], columns=EPISODE_COLUMNS)


def summary_table(frame):
    """Mean and std of Rot, TTT and goals per (orientation, axis, object set) cell."""
    table = frame.groupby(['orientation', 'axis', 'object_set'])[['rotations', 'ttt', 'goals']].agg(['mean', 'std'])
    table.columns = [f'{metric}_{stat}' for metric, stat in table.columns]
    return table.reset_index()


# ============================================================================
# POLICIES
# ============================================================================

class NetPolicy:
    """Deterministic (mean-action) policy from a teacher or student net."""

    def __init__(self, net: PolicyNet, normalizer: Optional[RunningMeanStd] = None):
        self.net = net
        self.normalizer = normalizer
        self.window = []

    def reset(self):
        self.window = []

    def __call__(self, obs, priv):
        raw = np.concatenate([obs, priv]) if self.net.priv_dim or self.net.encoder == 'tcn' else obs
        if self.normalizer is not None and len(self.normalizer.mean) == len(raw):
            raw = self.normalizer.normalize(raw)
        x = raw[:self.net.obs_dim]
        if self.net.encoder == 'tcn':
            self.window.append(x)
            mean, _, _ = net_forward(self.net, pad_history(self.window, self.net.history))
        else:
            mean, _, _ = net_forward(self.net, raw)
        return np.clip(mean, -1.0, 1.0)


class ZeroPolicy:
    """Holds the current joint targets."""

    def reset(self):
        pass

    def __call__(self, obs, priv):
        return np.zeros(num_joints)


def run_episode(env: RotateEnv, policy: Callable, action_scale, episode=0, orientation='palm_up', axis='+z',
                object_set='train'):
    obs, priv = env.reset()
    if hasattr(policy, 'reset'):
        policy.reset()
    done = False
    while not done:
        obs, priv, _, done, _ = env.step(policy(obs, priv) * action_scale)
    return EpisodeLog(env.log_rows, episode, orientation, axis, object_set)


# ============================================================================
# EVALUATION GRID
# ============================================================================

def evaluation_cells(config: RunConfig):
    """(orientation label, axis, object set, run config) for every evaluation cell."""
    cells = []
    trajectories = {}
    for name in config.eval.orientations:
        trajectories[name] = config.env.gravity.model_copy(update={'kind': 'fixed', 'orientation': name})
    if config.eval.rotating:
        trajectories.update(rotating_trajectories())
    for label, trajectory in trajectories.items():
        for axis in config.eval.axes:
            for object_set in config.eval.object_sets:
                env = config.env.model_copy(update={
                    'gravity': trajectory, 'orientation_mode': 'fixed', 'axis_mode': 'fixed', 'axis': axis,
                })
                cells.append((label, axis, object_set, config.model_copy(update={'env': env})))
    return cells


def evaluate(config: RunConfig, policy: Callable, grasp_bank=None):
    """Run the evaluation grid; returns (EvalSummary, per-episode frame, episode logs)."""
    episodes, logs = [], []
    action_scale = config.env.action_clip
    counter = 0
    for label, axis, object_set, cell_config in evaluation_cells(config):
        env = RotateEnv(cell_config, seed=config.seed + counter, grasp_bank=grasp_bank, object_set=object_set,
                        record=True)
        for _ in range(config.eval.episodes_per_cell):
            log = run_episode(env, policy, action_scale, counter, label, axis, object_set)
            metrics = episode_metrics(log, stuck_after=config.eval.stuck_seconds)
            episodes.append(metrics)
            if config.eval.log_episodes:
                logs.append(log)
            counter += 1
        cell = [e for e in episodes if (e.orientation, e.axis, e.object_set) == (label, axis, object_set)]
        stats = summarize(cell)
        logger.info(f"{label} {axis} {object_set}: Rot {stats.rotations_mean:.3f} +/- {stats.rotations_std:.3f} "
                    f"TTT {stats.ttt_mean:.2f} +/- {stats.ttt_std:.2f}")
    return summarize(episodes), episodes_frame(episodes), logs
