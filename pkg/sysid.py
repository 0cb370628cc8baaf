"""
System identification of the per-joint hand dynamics.

The parameter set is a (16, 5) table: one row per joint with stiffness,
damping, link mass, friction and armature. CMA-ES searches the log of the
free entries; frozen entries keep their values from the starting model.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from classes import HandModel, TrajectoryPair
from cma_es import cma_es_minimize
from constants import (
    SYSID_BOUNDS, SYSID_PARAM_NAMES, VALIDATION_ERRORS, chirp_amplitude, chirp_end_hz, chirp_start_hz, control_hz,
    num_joints, physics_dt, physics_substeps_per_control, step_amplitude, sysid_trajectory_steps,
)
from errors import InputDomainError, SimulationFault
from handsim import clamp_joints, initial_state, step
from randomization import orientation_gravity
from settings import SysIdConfig

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ['generation', 'evaluations', 'generation_best', 'best', 'sigma']


# ============================================================================
# PARAMETER VECTORS
# ============================================================================

def hand_to_params(model: HandModel):
    return np.stack([getattr(model, name) for name in SYSID_PARAM_NAMES], axis=-1)


def params_to_hand(base: HandModel, values):
    values = np.asarray(values, dtype=np.float64).reshape(num_joints, len(SYSID_PARAM_NAMES))
    return base.model_copy(update={name: values[:, i].copy() for i, name in enumerate(SYSID_PARAM_NAMES)})


def free_mask(config: SysIdConfig):
    joints = range(num_joints) if config.free_joints == 'all' else config.free_joints
    mask = np.zeros((num_joints, len(SYSID_PARAM_NAMES)), dtype=bool)
    for j in joints:
        for name in config.free_params:
            mask[j, SYSID_PARAM_NAMES.index(name)] = True
    return mask


def log_bounds(mask):
    lower = np.log([SYSID_BOUNDS[name][0] for name in SYSID_PARAM_NAMES])
    upper = np.log([SYSID_BOUNDS[name][1] for name in SYSID_PARAM_NAMES])
    return np.broadcast_to(lower, mask.shape)[mask], np.broadcast_to(upper, mask.shape)[mask]


def pack(values, mask):
    return np.log(np.asarray(values)[mask])


def unpack(x, base_values, mask):
    values = np.array(base_values, dtype=np.float64)
    values[mask] = np.exp(x)
    return values


def perturb_model(model: HandModel, rng, scale=0.3):
    """Multiply every identified parameter by exp(U(-scale, scale)), kept inside the bounds."""
    values = hand_to_params(model) * np.exp(rng.uniform(-scale, scale, (num_joints, len(SYSID_PARAM_NAMES))))
    lower = np.array([SYSID_BOUNDS[name][0] for name in SYSID_PARAM_NAMES])
    upper = np.array([SYSID_BOUNDS[name][1] for name in SYSID_PARAM_NAMES])
    return params_to_hand(model, np.clip(values, lower, upper))


# ============================================================================
# EXCITATION
# ============================================================================

def _alternating(n):
    return np.where(np.arange(n) % 2 == 0, 1.0, -1.0)


def step_targets(model: HandModel, steps=sysid_trajectory_steps, amplitude=step_amplitude):
    """Step away from the canonical pose for the first half, back for the second."""
    offset = amplitude * _alternating(num_joints)
    targets = np.repeat(model.q0[None, :], steps, axis=0)
    targets[:steps // 2] += offset
    return np.stack([clamp_joints(model, row)[0] for row in targets])


def chirp_targets(model: HandModel, steps=sysid_trajectory_steps, amplitude=chirp_amplitude,
                  f0=chirp_start_hz, f1=chirp_end_hz):
    """Linear chirp from f0 to f1 Hz about the canonical pose."""
    t = np.arange(steps) / control_hz
    duration = max(steps / control_hz, 1e-9)
    phase = 2.0 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t ** 2 / duration)
    targets = model.q0[None, :] + amplitude * np.sin(phase)[:, None] * _alternating(num_joints)[None, :]
    return np.stack([clamp_joints(model, row)[0] for row in targets])


SIGNALS = {'step': step_targets, 'chirp': chirp_targets}


# ============================================================================
# OBJECTIVE
# ============================================================================

def simulate_targets(model: HandModel, targets, orientation='palm_up', initial_q=None):
    """Joint positions after each control step while tracking ``targets`` with the hand alone."""
    state = initial_state(model, initial_q, gravity=orientation_gravity(orientation))
    positions = np.empty((len(targets), num_joints))
    for k, target in enumerate(targets):
        state = state.model_copy(update={'q_target': np.asarray(target, dtype=np.float64)})
        for _ in range(physics_substeps_per_control):
            state = step(model, state, None, dt=physics_dt)
        positions[k] = state.q
    return positions


def synthesize_pairs(model: HandModel, orientations, signals=('step', 'chirp'), steps=sysid_trajectory_steps):
    """Reference trajectories produced by ``model``, one per (orientation, signal)."""
    pairs = []
    for orientation in orientations:
        for signal in signals:
            targets = SIGNALS[signal](model, steps)
            reference = simulate_targets(model, targets, orientation)
            pairs.append(TrajectoryPair(
                targets=targets, reference=reference, orientation=orientation, initial_q=model.q0, signal=signal,
            ))
    return pairs


def trajectory_mse(model: HandModel, pairs):
    """Mean squared joint-position error over every pair, step and joint; inf on a simulation fault."""
    if not pairs:
        raise InputDomainError(VALIDATION_ERRORS['EMPTY_PAIRS'])
    total, count = 0.0, 0
    for pair in pairs:
        try:
            simulated = simulate_targets(model, pair.targets, pair.orientation, pair.initial_q)
        except SimulationFault as e:
            logger.warning(f"Simulation fault during trajectory evaluation: {e}")
            return math.inf
        total += float(np.sum((simulated - pair.reference) ** 2))
        count += simulated.size
    return total / count


# ============================================================================
# IDENTIFICATION
# ============================================================================

def _check_coverage(pairs, config: SysIdConfig):
    if not pairs:
        raise InputDomainError(VALIDATION_ERRORS['EMPTY_PAIRS'])
    covered = {pair.orientation for pair in pairs}
    missing = [name for name in config.orientations if name not in covered]
    if missing:
        raise InputDomainError(f'no trajectory pairs for hand orientations {missing}')


def identify(pairs, config: SysIdConfig = None, base: HandModel = None, seed=0, threads=1):
    """Fit the free parameters to ``pairs``; returns (identified model, convergence history)."""
    config = config or SysIdConfig()
    base = base or HandModel()
    _check_coverage(pairs, config)
    mask = free_mask(config)
    base_values = hand_to_params(base)
    lower, upper = log_bounds(mask)
    x0 = np.clip(pack(base_values, mask), lower, upper)

    def objective(x):
        return trajectory_mse(params_to_hand(base, unpack(x, base_values, mask)), pairs)

    logger.info(f"Identifying {int(mask.sum())} parameters from {len(pairs)} trajectory pairs")
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        best, history = cma_es_minimize(
            objective, x0, config.sigma0, bounds=(lower, upper), max_generations=config.max_generations,
            popsize=config.popsize, seed=seed, map_fn=pool.map if pool is not None else map,
        )
    finally:
        if pool is not None:
            pool.shutdown()
    model = params_to_hand(base, unpack(best, base_values, mask))
    frame = pd.DataFrame(history, columns=CONVERGENCE_COLUMNS)
    logger.info(f"Identification finished: best trajectory MSE {frame['best'].iloc[-1]:.3e}")
    return model, frame
