"""
Stable-grasp generation.

A candidate drops the object onto a noisy canonical hand pose and holds the
joint targets while gravity cycles through the six hand orientations. The
stored state is the one reached under palm-up gravity at the end.
"""
import logging
from collections import Counter
from typing import Optional

import numpy as np

from classes import GraspEntry, HandModel, ObjectModel
from constants import (
    GRASP_GRAVITY_SEQUENCE, GRASP_REJECTION_REASONS, RUNTIME_ERRORS, fall_distance, grasp_joint_noise,
    grasp_max_tip_distance, grasp_min_tip_contacts, grasp_settle_angular_speed, grasp_settle_linear_speed,
    grasp_sim_steps, object_spawn_height, physics_dt, physics_substeps_per_control,
)
from errors import GraspBankError, SimulationFault
from handsim import PenaltyBackend, clamp_joints, fingertip_arrays, initial_state
from randomization import orientation_gravity, sample_object
from rotmath import random_quaternion
from settings import GraspConfig, RandomizationConfig

logger = logging.getLogger(__name__)


def tip_object_distance(model: HandModel, state):
    """Summed distance from each fingertip center to the object center."""
    tips, _ = fingertip_arrays(model, state.q)
    return float(np.linalg.norm(tips - state.object_position, axis=-1).sum())


def _fell(model, state):
    tips, _ = fingertip_arrays(model, state.q)
    return float(np.linalg.norm(state.object_position - tips.mean(axis=0))) > fall_distance


def hold_under_gravity_cycle(model: HandModel, obj: ObjectModel, state, steps=grasp_sim_steps, backend=None):
    """Hold the joint targets for ``steps`` control steps while gravity cycles.

    Returns (final state, rejection reason or None).
    """
    backend = backend or PenaltyBackend()
    phase = max(steps // len(GRASP_GRAVITY_SEQUENCE), 1)
    for k in range(steps):
        name = GRASP_GRAVITY_SEQUENCE[min(k // phase, len(GRASP_GRAVITY_SEQUENCE) - 1)]
        state = state.model_copy(update={'gravity': orientation_gravity(name)})
        try:
            for _ in range(physics_substeps_per_control):
                state = backend.step(model, state, obj, dt=physics_dt)
        except SimulationFault as e:
            logger.debug(f"Grasp candidate faulted: {e}")
            return state, 'sim_fault'
        if state.non_tip_contacts():
            return state, 'non_tip_contact'
        if _fell(model, state):
            return state, 'fell'
    return state, None


def grasp_rejection(model: HandModel, state):
    """Final acceptance checks on a settled state; returns a reason or None."""
    fingers = {c.finger for c in state.tip_contacts()}
    if state.non_tip_contacts():
        return 'non_tip_contact'
    if len(fingers) < grasp_min_tip_contacts:
        return 'few_tip_contacts'
    if tip_object_distance(model, state) >= grasp_max_tip_distance:
        return 'far_from_tips'
    if (np.linalg.norm(state.object_linvel) > grasp_settle_linear_speed
            or np.linalg.norm(state.object_angvel) > grasp_settle_angular_speed):
        return 'unstable'
    return None


def generate_grasp(model: HandModel, obj: ObjectModel, rng, seed=0, index=0, steps=grasp_sim_steps, backend=None):
    """One grasp attempt; returns (GraspEntry or None, reason)."""
    offset = rng.uniform(-grasp_joint_noise, grasp_joint_noise, size=model.q0.shape)
    q, _ = clamp_joints(model, model.q0 + offset)
    quat = random_quaternion(rng)
    state = initial_state(model, q, np.array([0.0, 0.0, object_spawn_height]), quat,
                          orientation_gravity('palm_up'))
    state, reason = hold_under_gravity_cycle(model, obj, state, steps, backend)
    reason = reason or grasp_rejection(model, state)
    if reason is not None:
        return None, reason
    entry = GraspEntry(
        object=obj, seed=seed, index=index, position=state.object_position,
        orientation=state.object_quat, q=state.q,
    )
    return entry, 'accepted'


def replay_grasp(model: HandModel, entry: GraspEntry, steps=grasp_sim_steps, backend=None):
    """Re-simulate a stored grasp from rest; returns (passed, reason)."""
    state = initial_state(model, entry.q, entry.position, entry.orientation, orientation_gravity('palm_up'))
    state, reason = hold_under_gravity_cycle(model, entry.object, state, steps, backend)
    reason = reason or grasp_rejection(model, state)
    return reason is None, reason or 'accepted'


def generate_bank(model: HandModel, config: Optional[GraspConfig] = None,
                  randomization: Optional[RandomizationConfig] = None, seed=0, backend=None):
    """Accepted grasps for ``config.objects`` sampled objects plus rejection counts.

    Every ``config.max_attempts`` attempts on one object, the acceptance rate
    for that object is checked against ``config.min_acceptance``.
    """
    config = config or GraspConfig()
    randomization = randomization or RandomizationConfig()
    rng = np.random.default_rng(seed)
    bank = []
    reasons = Counter()
    total = 0

    for object_index in range(config.objects):
        obj = sample_object(rng, randomization)
        accepted = attempts = 0
        logger.info(f"Generating {config.count} grasps for object {object_index} ({obj.shape})")
        while accepted < config.count:
            entry, reason = generate_grasp(model, obj, rng, seed=seed, index=total,
                                           steps=config.sim_steps, backend=backend)
            attempts += 1
            total += 1
            reasons[reason] += 1
            if entry is not None:
                bank.append(entry)
                accepted += 1
            if attempts % config.max_attempts == 0 and accepted / attempts < config.min_acceptance:
                logger.error(f"Grasp rejection counts: {dict(reasons)}")
                raise GraspBankError(RUNTIME_ERRORS['LOW_ACCEPTANCE'].format(
                    rate=accepted / attempts, attempts=attempts, minimum=config.min_acceptance,
                ))

    rejected = {name: reasons[name] for name in GRASP_REJECTION_REASONS if reasons[name]}
    logger.info(f"Accepted {len(bank)} grasps in {total} attempts; rejections {rejected}")
    return bank, reasons
