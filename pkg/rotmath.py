"""
Rotation utilities for goals, rewards and termination.

Conventions
-----------
- Quaternions are (w, x, y, z), right-handed, active rotations.
- Array functions broadcast over leading batch dimensions.
- q and -q describe the same rotation; every distance below respects that.
- Angles are radians, lengths meters.
"""
import math

import numpy as np
from scipy.spatial.transform import Rotation

from classes import KeypointSet, Pose, Quaternion, UnitVector3
from constants import CANONICAL_KEYPOINTS, VALIDATION_ERRORS, axis_rest_epsilon, unit_tolerance
from errors import InputDomainError

KEYPOINTS_LOCAL = np.array(CANONICAL_KEYPOINTS, dtype=np.float64)


# ============================================================================
# ARRAY LEVEL
# ============================================================================

def quat_mul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise InputDomainError(VALIDATION_ERRORS['ZERO_QUATERNION'])
    return q / norm


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    half = 0.5 * np.asarray(angle, dtype=np.float64)
    return np.concatenate([np.cos(half)[..., None], np.sin(half)[..., None] * axis], axis=-1)


def quat_from_rotvec(rotvec):
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.linalg.norm(rotvec, axis=-1)
    # sin(a/2)/a with its series value near zero
    safe = np.where(angle > 1e-12, angle, 1.0)
    coeff = np.where(angle > 1e-12, np.sin(0.5 * safe) / safe, 0.5 - angle ** 2 / 48.0)
    return np.concatenate([np.cos(0.5 * angle)[..., None], coeff[..., None] * rotvec], axis=-1)


def quat_to_rotvec(q):
    """Rotation vector of the shortest rotation represented by q."""
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., :1] < 0.0, -q, q)
    w = q[..., 0]
    v = q[..., 1:]
    vnorm = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(vnorm, w)
    scale = np.where(vnorm > 1e-12, angle / np.where(vnorm > 1e-12, vnorm, 1.0), 2.0 / np.maximum(w, 1e-12))
    return v * scale[..., None]


def quat_apply(q, v):
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_to_matrix(q):
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def random_quaternion(rng):
    return Rotation.random(random_state=rng).as_quat(scalar_first=True)


def keypoints_array(position, quat):
    return np.asarray(position, dtype=np.float64) + quat_apply(np.asarray(quat)[None, :], KEYPOINTS_LOCAL)


def keypoint_distance_array(points_a, points_b):
    return float(np.mean(np.linalg.norm(np.asarray(points_a) - np.asarray(points_b), axis=-1)))


def pose_keypoint_distance(position_a, quat_a, position_b, quat_b):
    return keypoint_distance_array(keypoints_array(position_a, quat_a), keypoints_array(position_b, quat_b))


def delta_rotation_array(q_prev, q_curr, axis):
    rotvec = quat_to_rotvec(quat_mul(q_curr, quat_conjugate(q_prev)))
    return float(np.dot(rotvec, axis))


def net_rotation_axis(q_window, epsilon=axis_rest_epsilon):
    """Unit axis of the rotation from the first to the last orientation, or None at rest."""
    window = np.asarray(q_window, dtype=np.float64)
    rotvec = quat_to_rotvec(quat_mul(window[-1], quat_conjugate(window[0])))
    angle = float(np.linalg.norm(rotvec))
    if angle < epsilon:
        return None
    return rotvec / angle


def axis_deviation_array(q_window, axis, epsilon=axis_rest_epsilon, signed=False):
    """Angle between ``axis`` and the window's net rotation axis.

    Unsigned by default: the axis is a line, the result lies in [0, pi/2] and
    pure backward rotation about ``axis`` scores 0. With ``signed=True`` the
    axis is directed and backward rotation scores pi. A net rotation below
    ``epsilon`` counts as rest and scores 0.
    """
    net_axis = net_rotation_axis(q_window, epsilon)
    if net_axis is None:
        return 0.0
    cosine = float(np.dot(net_axis, axis))
    if not signed:
        cosine = abs(cosine)
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))


# ============================================================================
# MODEL LEVEL
# ============================================================================

def _axis_array(k):
    if isinstance(k, UnitVector3):
        return k.as_array()
    axis = np.asarray(k, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > unit_tolerance:
        raise InputDomainError(VALIDATION_ERRORS['NON_UNIT_AXIS'].format(norm=norm))
    return axis


def _quat_array(q):
    if isinstance(q, Quaternion):
        return q.as_array()
    return quat_normalize(q)


def rotate_about_axis(q, k, theta):
    if abs(theta) > math.pi + 1e-12:
        raise InputDomainError(VALIDATION_ERRORS['ANGLE_RANGE'].format(theta=theta))
    axis = _axis_array(k)
    composed = quat_mul(quat_from_axis_angle(axis, theta), _quat_array(q))
    return Quaternion.from_array(composed)


def keypoints_of(pose: Pose) -> KeypointSet:
    return KeypointSet(points=keypoints_array(pose.position, pose.orientation.as_array()))


def keypoint_distance(a: KeypointSet, b: KeypointSet) -> float:
    return keypoint_distance_array(a.points, b.points)


def delta_rotation_about_axis(q_prev, q_curr, k) -> float:
    return delta_rotation_array(_quat_array(q_prev), _quat_array(q_curr), _axis_array(k))


def axis_deviation(q_window, k, epsilon=axis_rest_epsilon, signed=False) -> float:
    """Angle between k and the axis of the net rotation across the window.

    The axis is treated as a line unless ``signed`` is set, so rotating
    backwards about k reports 0 rather than pi.
    """
    if len(q_window) < 2:
        raise InputDomainError('axis_deviation needs a window of at least two orientations')
    window = np.stack([_quat_array(q) for q in q_window])
    return axis_deviation_array(window, _axis_array(k), epsilon, signed)
