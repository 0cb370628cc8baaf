from typing import Annotated, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, field_validator, model_validator
)

from constants import (
    CANONICAL_KEYPOINTS, GRAVITY_MAGNITUDE, HAND_ORIENTATIONS, OBJECT_SHAPES, canonical_finger_pose,
    contact_damping, default_armature, default_damping, default_joint_friction, default_link_mass,
    default_object_mass, default_stiffness, disturbance_decay, disturbance_probability, disturbance_scale,
    finger_base_angles, finger_base_radius, fingertip_orientation_noise_std, fingertip_position_noise_std,
    fingertip_radius, force_noise_std, joint_lower_limits, joint_noise_std, joint_upper_limits, k_contact,
    link_lengths, link_radius, num_fingers, num_joints, object_friction, pose_noise_std,
    sim_internal_substeps, torque_limit, unit_tolerance,
)


def _as_float_array(value):
    return np.array(value, dtype=np.float64)


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda a: np.asarray(a).tolist(), return_type=list, when_used='json'),
]


def _check_shape(value, shape, name):
    if value.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {value.shape}")
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} contains non-finite values")
    return value


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


# ============================================================================
# ROTATION TYPES
# ============================================================================

class Quaternion(BaseModel):
    """Unit quaternion in (w, x, y, z) order; construction normalizes."""
    model_config = ConfigDict(frozen=True)

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @model_validator(mode='before')
    @classmethod
    def normalize(cls, data):
        if isinstance(data, dict):
            fallback = 1.0 if not data else 0.0
            values = np.array([float(data.get('w', fallback))] + [float(data.get(k, 0.0)) for k in 'xyz'])
        else:
            values = np.asarray(data, dtype=np.float64).reshape(4)
        norm = float(np.linalg.norm(values))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError('Quaternion has zero or non-finite norm')
        values = values / norm
        return dict(zip('wxyz', values.tolist()))

    @classmethod
    def identity(cls):
        return cls(w=1.0, x=0.0, y=0.0, z=0.0)

    @classmethod
    def from_array(cls, values):
        return cls.model_validate(np.asarray(values, dtype=np.float64))

    def as_array(self):
        return np.array([self.w, self.x, self.y, self.z])

    def __neg__(self):
        return Quaternion.from_array(-self.as_array())


class UnitVector3(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float

    @model_validator(mode='after')
    def check_unit(self):
        norm = float(np.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2))
        if abs(norm - 1.0) > unit_tolerance:
            raise ValueError(f'UnitVector3 must have unit norm (got {norm:.12f})')
        return self

    @classmethod
    def normalized(cls, values):
        values = np.asarray(values, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            raise ValueError('Cannot normalize a zero vector')
        return cls(**dict(zip('xyz', (values / norm).tolist())))

    def as_array(self):
        return np.array([self.x, self.y, self.z])


class Pose(ArrayModel):
    position: FloatArray = Field(default_factory=lambda: np.zeros(3))
    orientation: Quaternion = Field(default_factory=Quaternion.identity)

    @field_validator('position')
    @classmethod
    def check_position(cls, value):
        return _check_shape(value, (3,), 'position')


class KeypointSet(ArrayModel):
    points: FloatArray

    @field_validator('points')
    @classmethod
    def check_points(cls, value):
        return _check_shape(value, (len(CANONICAL_KEYPOINTS), 3), 'points')


# ============================================================================
# SIMULATION MODELS
# ============================================================================

def _per_joint(value):
    return np.full(num_joints, value, dtype=np.float64)


class HandModel(ArrayModel):
    """Four-finger, sixteen-joint serial-chain hand with per-joint dynamics."""

    link_lengths: FloatArray = Field(default_factory=lambda: np.tile(link_lengths, (num_fingers, 1)))
    joint_lower: FloatArray = Field(default_factory=lambda: np.tile(joint_lower_limits, num_fingers))
    joint_upper: FloatArray = Field(default_factory=lambda: np.tile(joint_upper_limits, num_fingers))
    fingertip_radius: float = fingertip_radius
    link_radius: float = link_radius
    base_radius: float = finger_base_radius
    base_angles: Tuple[float, float, float, float] = finger_base_angles
    stiffness: FloatArray = Field(default_factory=lambda: _per_joint(default_stiffness))
    damping: FloatArray = Field(default_factory=lambda: _per_joint(default_damping))
    mass: FloatArray = Field(default_factory=lambda: _per_joint(default_link_mass))
    friction: FloatArray = Field(default_factory=lambda: _per_joint(default_joint_friction))
    armature: FloatArray = Field(default_factory=lambda: _per_joint(default_armature))
    q0: FloatArray = Field(default_factory=lambda: np.tile(canonical_finger_pose, num_fingers))
    k_contact: float = k_contact
    contact_damping: float = contact_damping
    torque_limit: float = torque_limit
    internal_substeps: int = Field(default=sim_internal_substeps, ge=1)

    @field_validator('link_lengths')
    @classmethod
    def check_links(cls, value):
        _check_shape(value, (num_fingers, 4), 'link_lengths')
        if np.any(value <= 0):
            raise ValueError('link lengths must be positive')
        return value

    @field_validator('joint_lower', 'joint_upper', 'q0', 'stiffness', 'damping', 'mass', 'friction', 'armature')
    @classmethod
    def check_joint_vector(cls, value, info):
        _check_shape(value, (num_joints,), info.field_name)
        if info.field_name in ('stiffness', 'damping', 'friction') and np.any(value < 0):
            raise ValueError(f'{info.field_name} must be non-negative')
        if info.field_name in ('mass', 'armature') and np.any(value <= 0):
            raise ValueError(f'{info.field_name} must be positive')
        return value

    @field_validator('fingertip_radius', 'link_radius', 'base_radius', 'k_contact', 'torque_limit')
    @classmethod
    def check_positive(cls, value, info):
        if value <= 0:
            raise ValueError(f'{info.field_name} must be positive')
        return value

    @model_validator(mode='after')
    def check_limits(self):
        if np.any(self.joint_lower >= self.joint_upper):
            raise ValueError('joint lower limits must be below upper limits')
        return self


class ObjectModel(ArrayModel):
    """Primitive object; dimensions are (radius, width) for capsules and
    spheres (width unused) and (width, height) for boxes."""

    shape: Literal['capsule', 'box', 'sphere'] = 'capsule'
    dimensions: Tuple[float, float] = (0.03, 0.006)
    mass: float = Field(default=default_object_mass, gt=0)
    com: FloatArray = Field(default_factory=lambda: np.zeros(3))
    friction: float = Field(default=object_friction, gt=0)

    @field_validator('com')
    @classmethod
    def check_com(cls, value):
        return _check_shape(value, (3,), 'com')

    @model_validator(mode='after')
    def check_dimensions(self):
        first, second = self.dimensions
        if first <= 0 or second < 0:
            raise ValueError(f'invalid dimensions {self.dimensions} for {self.shape}')
        if self.shape == 'box' and second <= 0:
            raise ValueError('box height must be positive')
        if self.shape not in OBJECT_SHAPES:
            raise ValueError(f'unknown shape {self.shape}')
        return self


class ContactRecord(ArrayModel):
    finger: int
    is_tip: bool
    segment: int = 3
    local_position: FloatArray
    world_point: FloatArray
    world_normal: FloatArray
    force: FloatArray
    penetration: float = 0.0


class HandObjectState(ArrayModel):
    q: FloatArray
    qd: FloatArray
    q_target: FloatArray
    object_position: FloatArray = Field(default_factory=lambda: np.zeros(3))
    object_quat: FloatArray = Field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    object_linvel: FloatArray = Field(default_factory=lambda: np.zeros(3))
    object_angvel: FloatArray = Field(default_factory=lambda: np.zeros(3))
    contacts: List[ContactRecord] = Field(default_factory=list)
    step: int = 0
    gravity: FloatArray = Field(default_factory=lambda: np.array([0.0, 0.0, -GRAVITY_MAGNITUDE]))
    disturbance: FloatArray = Field(default_factory=lambda: np.zeros(3))
    applied_torque: FloatArray = Field(default_factory=lambda: np.zeros(num_joints))
    clamped: bool = False

    @property
    def object_pose(self):
        return Pose(position=self.object_position, orientation=Quaternion.from_array(self.object_quat))

    def tip_contacts(self):
        return [c for c in self.contacts if c.is_tip]

    def non_tip_contacts(self):
        return [c for c in self.contacts if not c.is_tip]


# ============================================================================
# TACTILE
# ============================================================================

class RawContact(ArrayModel):
    force: FloatArray = Field(default_factory=lambda: np.zeros(3))
    local_position: Optional[FloatArray] = None


class TactileFrame(ArrayModel):
    contact: FloatArray = Field(default_factory=lambda: np.zeros(num_fingers))
    pose: FloatArray = Field(default_factory=lambda: np.zeros((num_fingers, 2)))
    force: FloatArray = Field(default_factory=lambda: np.zeros(num_fingers))
    filtered_force: FloatArray = Field(default_factory=lambda: np.zeros((num_fingers, 3)))

    def flat(self):
        return np.concatenate([self.contact, self.pose.reshape(-1), self.force])


# ============================================================================
# ENVIRONMENT
# ============================================================================

class GoalSpec(ArrayModel):
    axis: UnitVector3
    pose: Pose
    increment: float
    tolerance: float = Field(gt=0)
    count: int = 0


class RewardBreakdown(BaseModel):
    r_kp: float = 0.0
    r_rot: float = 0.0
    r_goal: float = 0.0
    r_gc: float = 0.0
    r_bc: float = 0.0
    r_omega: float = 0.0
    r_pose: float = 0.0
    r_work: float = 0.0
    r_torque: float = 0.0
    r_penalty: float = 0.0
    r_av: float = 0.0
    r_axis: float = 0.0
    lambda_rew: float = 1.0
    total: float = 0.0


class GravityTrajectory(BaseModel):
    kind: Literal['fixed', 'random', 'rotating'] = 'fixed'
    orientation: str = 'palm_up'
    axis: Literal['x', 'y', 'z'] = 'z'
    start: float = 0.0
    end: float = 0.0
    duration: float = 30.0
    magnitude: float = GRAVITY_MAGNITUDE

    @field_validator('orientation')
    @classmethod
    def check_orientation(cls, value):
        if value not in HAND_ORIENTATIONS:
            raise ValueError(f'unknown hand orientation {value!r}')
        return value


class EnvParams(ArrayModel):
    object: ObjectModel
    stiffness_scale: FloatArray = Field(default_factory=lambda: np.ones(num_joints))
    damping_scale: FloatArray = Field(default_factory=lambda: np.ones(num_joints))
    joint_noise: float = joint_noise_std
    fingertip_position_noise: float = fingertip_position_noise_std
    fingertip_orientation_noise: float = fingertip_orientation_noise_std
    pose_noise: float = pose_noise_std
    force_noise: float = force_noise_std
    disturbance_scale: float = disturbance_scale
    disturbance_probability: float = disturbance_probability
    disturbance_decay: float = disturbance_decay
    friction: float = object_friction
    gravity: GravityTrajectory = Field(default_factory=GravityTrajectory)
    axis: UnitVector3 = Field(default_factory=lambda: UnitVector3(x=0.0, y=0.0, z=1.0))


class GraspEntry(ArrayModel):
    object: ObjectModel
    seed: int
    index: int
    position: FloatArray
    orientation: FloatArray
    q: FloatArray

    @field_validator('position')
    @classmethod
    def check_position(cls, value):
        return _check_shape(value, (3,), 'position')

    @field_validator('orientation')
    @classmethod
    def check_orientation(cls, value):
        _check_shape(value, (4,), 'orientation')
        return value / np.linalg.norm(value)

    @field_validator('q')
    @classmethod
    def check_q(cls, value):
        return _check_shape(value, (num_joints,), 'q')


# ============================================================================
# SYSTEM IDENTIFICATION
# ============================================================================

class TrajectoryPair(ArrayModel):
    targets: FloatArray
    reference: FloatArray
    orientation: str = 'palm_up'
    initial_q: Optional[FloatArray] = None
    signal: str = 'step'

    @model_validator(mode='after')
    def check_lengths(self):
        if self.targets.ndim != 2 or self.targets.shape[1] != num_joints:
            raise ValueError(f'targets must be (T, {num_joints}), got {self.targets.shape}')
        if self.reference.shape != self.targets.shape:
            raise ValueError(
                f'Trajectory pair lengths differ ({self.targets.shape[0]} targets vs '
                f'{self.reference.shape[0]} reference steps)'
            )
        if self.orientation not in HAND_ORIENTATIONS:
            raise ValueError(f'unknown hand orientation {self.orientation!r}')
        return self


# ============================================================================
# EVALUATION
# ============================================================================

class EpisodeMetrics(BaseModel):
    episode: int
    orientation: str = 'palm_up'
    axis: str = '+z'
    object_set: str = 'train'
    rotations: float
    ttt: float = Field(ge=0.0)
    cause: str
    goals: int


class EvalSummary(BaseModel):
    episodes: List[EpisodeMetrics] = Field(default_factory=list)
    rotations_mean: float = 0.0
    rotations_std: float = 0.0
    ttt_mean: float = 0.0
    ttt_std: float = 0.0
    goals_mean: float = 0.0
