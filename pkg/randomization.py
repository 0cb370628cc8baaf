import logging

import numpy as np

from classes import EnvParams, GravityTrajectory, ObjectModel, UnitVector3
from constants import (
    GRAVITY_MAGNITUDE, HAND_ORIENTATIONS, OOD_RANGES, ROTATION_AXES, VALIDATION_ERRORS, num_joints,
)
from errors import InputDomainError
from rotmath import quat_apply, quat_conjugate, quat_from_axis_angle
from settings import EnvConfig, RandomizationConfig, TactileConfig

logger = logging.getLogger(__name__)

_AXIS_VECTORS = {'x': (1.0, 0.0, 0.0), 'y': (0.0, 1.0, 0.0), 'z': (0.0, 0.0, 1.0)}


def _uniform(rng, bounds, size=None):
    low, high = bounds
    return rng.uniform(low, high, size=size)


def sample_object(rng, config: RandomizationConfig, object_set=None):
    object_set = object_set or config.object_set
    ranges = config.ranges
    if object_set == 'ood_shape':
        shape = str(rng.choice(['sphere', 'box']))
        if shape == 'sphere':
            dimensions = (_uniform(rng, OOD_RANGES['sphere_radius']), 0.0)
        else:
            dimensions = (_uniform(rng, OOD_RANGES['box_width']), _uniform(rng, OOD_RANGES['box_height']))
    else:
        shape = str(rng.choice(config.shapes))
        if shape == 'capsule':
            dimensions = (_uniform(rng, ranges['capsule_radius']), _uniform(rng, ranges['capsule_width']))
        elif shape == 'box':
            dimensions = (_uniform(rng, ranges['box_width']), _uniform(rng, ranges['box_height']))
        else:
            dimensions = (_uniform(rng, ranges['capsule_radius']), 0.0)
    mass_range = OOD_RANGES['mass'] if object_set == 'ood_mass' else ranges['mass']
    return ObjectModel(
        shape=shape,
        dimensions=(float(dimensions[0]), float(dimensions[1])),
        mass=float(_uniform(rng, mass_range)),
        com=_uniform(rng, ranges['com'], size=3),
        friction=config.friction,
    )


def sample_axis(rng, mode, name='+z'):
    if mode == 'fixed':
        return UnitVector3.normalized(ROTATION_AXES[name])
    if mode == 'principal':
        key = sorted(ROTATION_AXES)[int(rng.integers(len(ROTATION_AXES)))]
        return UnitVector3.normalized(ROTATION_AXES[key])
    if mode == 'sphere':
        return UnitVector3.normalized(rng.normal(size=3))
    raise InputDomainError(VALIDATION_ERRORS['UNKNOWN_MODE'].format(kind='axis', mode=mode))


def sample_gravity(rng, env: EnvConfig):
    trajectory = env.gravity
    if env.orientation_mode == 'random' or trajectory.kind == 'random':
        names = sorted(HAND_ORIENTATIONS)
        name = names[int(rng.integers(len(names)))]
        return trajectory.model_copy(update={'kind': 'fixed', 'orientation': name})
    if env.orientation_mode == 'rotating' and trajectory.kind != 'rotating':
        return trajectory.model_copy(update={'kind': 'rotating'})
    return trajectory


def sample_env_params(rng, config: RandomizationConfig = None, env: EnvConfig = None, object_set=None,
                      tactile: TactileConfig = None) -> EnvParams:
    config = config or RandomizationConfig()
    env = env or EnvConfig()
    tactile = tactile or TactileConfig()
    obj = sample_object(rng, config, object_set)
    gravity = sample_gravity(rng, env)
    axis = sample_axis(rng, env.axis_mode, env.axis)
    if not config.enabled:
        return EnvParams(
            object=obj, joint_noise=0.0, fingertip_position_noise=0.0, fingertip_orientation_noise=0.0,
            pose_noise=0.0, force_noise=0.0, disturbance_probability=0.0, friction=config.friction,
            gravity=gravity, axis=axis,
        )
    return EnvParams(
        object=obj,
        stiffness_scale=_uniform(rng, config.ranges['pd_scale'], size=num_joints),
        damping_scale=_uniform(rng, config.ranges['pd_scale'], size=num_joints),
        joint_noise=config.joint_noise,
        fingertip_position_noise=config.fingertip_position_noise,
        fingertip_orientation_noise=config.fingertip_orientation_noise,
        pose_noise=tactile.pose_noise,
        force_noise=tactile.force_noise,
        disturbance_scale=config.disturbance_scale,
        disturbance_probability=config.disturbance_probability if config.disturbance else 0.0,
        disturbance_decay=config.disturbance_decay,
        friction=config.friction,
        gravity=gravity,
        axis=axis,
    )


def rotating_trajectories():
    """The two rotating-hand evaluation trajectories, both starting palm up."""
    return {
        'rotate_z': GravityTrajectory(kind='rotating', orientation='palm_up', axis='z', start=0.0, end=2 * np.pi),
        'rotate_x': GravityTrajectory(kind='rotating', orientation='palm_up', axis='x', start=-np.pi, end=np.pi),
    }


def gravity_at(trajectory: GravityTrajectory, t):
    """Unit gravity direction in the hand frame and its magnitude at time t."""
    if trajectory.orientation not in HAND_ORIENTATIONS:
        raise InputDomainError(VALIDATION_ERRORS['UNKNOWN_ORIENTATION'].format(name=trajectory.orientation))
    direction = np.array(HAND_ORIENTATIONS[trajectory.orientation])
    if trajectory.kind == 'rotating':
        progress = min(max(t / trajectory.duration, 0.0), 1.0)
        angle = trajectory.start + (trajectory.end - trajectory.start) * progress
        turn = quat_from_axis_angle(np.array(_AXIS_VECTORS[trajectory.axis]), angle)
        direction = quat_apply(quat_conjugate(turn), direction)
    return UnitVector3.normalized(direction), trajectory.magnitude


def gravity_vector(trajectory: GravityTrajectory, t):
    direction, magnitude = gravity_at(trajectory, t)
    return direction.as_array() * magnitude


def orientation_gravity(name, magnitude=GRAVITY_MAGNITUDE):
    if name not in HAND_ORIENTATIONS:
        raise InputDomainError(VALIDATION_ERRORS['UNKNOWN_ORIENTATION'].format(name=name))
    return np.array(HAND_ORIENTATIONS[name]) * magnitude
