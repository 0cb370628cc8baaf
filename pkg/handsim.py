"""
Quasi-static penalty-contact backend for a four-finger hand.

Hand frame: z points out of the palm, finger bases sit on a circle in the
palm plane. Each finger is Rx(q0) Tz(l0) Ry(q1) Tz(l1) Ry(q2) Tz(l2) Ry(q3) Tz(l3)
in a finger frame whose x axis points toward the palm center. Collision
geometry is one sphere per fingertip plus two spheres on each of the three
proximal links; objects are capsules, boxes or spheres described by a
signed distance function.
"""
import logging
from typing import Optional, Protocol

import numpy as np

from classes import ContactRecord, HandModel, HandObjectState, ObjectModel, Pose, Quaternion
from constants import (
    GRAVITY_MAGNITUDE, RUNTIME_ERRORS, VALIDATION_ERRORS, joint_friction_velocity_scale, joints_per_finger,
    non_tip_sample_fractions, num_fingers, num_joints, physics_dt,
)
from errors import InputDomainError, SimulationFault
from rotmath import quat_from_rotvec, quat_mul, quat_to_matrix

logger = logging.getLogger(__name__)

# ============================================================================
# COLLISION SPHERE LAYOUT
# ============================================================================

_SLOTS = [(3, 1.0)] + [(link, frac) for link in range(3) for frac in non_tip_sample_fractions]
SPHERES_PER_FINGER = len(_SLOTS)
NUM_SPHERES = num_fingers * SPHERES_PER_FINGER

SPHERE_FINGER = np.repeat(np.arange(num_fingers), SPHERES_PER_FINGER)
SPHERE_LINK = np.tile([link for link, _ in _SLOTS], num_fingers)
SPHERE_FRACTION = np.tile([frac for _, frac in _SLOTS], num_fingers)
SPHERE_IS_TIP = np.tile([slot == 0 for slot in range(SPHERES_PER_FINGER)], num_fingers)

_JOINT_FINGER = np.arange(num_joints) // joints_per_finger
_JOINT_INDEX = np.arange(num_joints) % joints_per_finger

# joint j moves sphere s when it sits on the same finger at or before the sphere's link
SPHERE_JOINT_MASK = (
    (SPHERE_FINGER[:, None] == _JOINT_FINGER[None, :]) & (_JOINT_INDEX[None, :] <= SPHERE_LINK[:, None])
).astype(np.float64)

# joint j moves the center of mass of link k under the same rule
LINK_JOINT_MASK = (
    (_JOINT_FINGER[:, None] == _JOINT_FINGER[None, :]) & (_JOINT_INDEX[None, :] <= _JOINT_INDEX[:, None])
).astype(np.float64)


def _rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    zeros, ones = np.zeros_like(angle), np.ones_like(angle)
    return np.stack([
        np.stack([ones, zeros, zeros], -1),
        np.stack([zeros, c, -s], -1),
        np.stack([zeros, s, c], -1),
    ], -2)


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    zeros, ones = np.zeros_like(angle), np.ones_like(angle)
    return np.stack([
        np.stack([c, zeros, s], -1),
        np.stack([zeros, ones, zeros], -1),
        np.stack([-s, zeros, c], -1),
    ], -2)


def finger_bases(model: HandModel):
    angles = np.asarray(model.base_angles, dtype=np.float64)
    c, s = np.cos(angles), np.sin(angles)
    positions = model.base_radius * np.stack([c, s, np.zeros_like(c)], -1)
    x_axis = -np.stack([c, s, np.zeros_like(c)], -1)
    y_axis = np.stack([s, -c, np.zeros_like(c)], -1)
    z_axis = np.tile([0.0, 0.0, 1.0], (num_fingers, 1))
    rotations = np.stack([x_axis, y_axis, z_axis], -1)
    return positions, rotations


def clamp_joints(model: HandModel, q):
    clamped = np.clip(q, model.joint_lower, model.joint_upper)
    return clamped, bool(np.any(clamped != q))


def _chain(model: HandModel, q):
    """Joint origins, joint axes and link end points for every finger, flattened to joint order."""
    q = np.asarray(q, dtype=np.float64).reshape(num_fingers, joints_per_finger)
    position, rotation = finger_bases(model)
    joint_pos = np.empty((num_fingers, joints_per_finger, 3))
    joint_axis = np.empty((num_fingers, joints_per_finger, 3))
    link_end = np.empty((num_fingers, joints_per_finger, 3))
    for j in range(joints_per_finger):
        joint_pos[:, j] = position
        if j == 0:
            joint_axis[:, j] = rotation[:, :, 0]
            rotation = rotation @ _rot_x(q[:, j])
        else:
            joint_axis[:, j] = rotation[:, :, 1]
            rotation = rotation @ _rot_y(q[:, j])
        position = position + rotation[:, :, 2] * model.link_lengths[:, j:j + 1]
        link_end[:, j] = position
    return {
        'joint_pos': joint_pos.reshape(num_joints, 3),
        'joint_axis': joint_axis.reshape(num_joints, 3),
        'link_end': link_end.reshape(num_joints, 3),
        'tip_pos': link_end[:, -1].copy(),
        'tip_rot': rotation,
    }


def forward_kinematics(model: HandModel, q):
    """Fingertip poses for joint vector q; returns (poses, clamped)."""
    q, clamped = clamp_joints(model, np.asarray(q, dtype=np.float64))
    if clamped:
        logger.debug("forward_kinematics clamped joints to limits")
    chain = _chain(model, q)
    poses = []
    for finger in range(num_fingers):
        matrix = chain['tip_rot'][finger]
        poses.append(Pose(position=chain['tip_pos'][finger], orientation=Quaternion.from_array(_matrix_to_quat(matrix))))
    return poses, clamped


def fingertip_arrays(model: HandModel, q):
    chain = _chain(model, q)
    return chain['tip_pos'], np.stack([_matrix_to_quat(m) for m in chain['tip_rot']])


def _matrix_to_quat(m):
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0:
        s = 2.0 * np.sqrt(trace + 1.0)
        quat = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        quat = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        quat = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        quat = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    quat = np.array(quat)
    return quat / np.linalg.norm(quat)


def _sphere_centers(model: HandModel, chain):
    start = chain['joint_pos'].reshape(num_fingers, joints_per_finger, 3)
    end = chain['link_end'].reshape(num_fingers, joints_per_finger, 3)
    link = SPHERE_LINK.reshape(num_fingers, SPHERES_PER_FINGER)
    frac = SPHERE_FRACTION.reshape(num_fingers, SPHERES_PER_FINGER)[..., None]
    rows = np.arange(num_fingers)[:, None]
    centers = start[rows, link] + frac * (end[rows, link] - start[rows, link])
    radii = np.where(SPHERE_IS_TIP, model.fingertip_radius, model.link_radius)
    return centers.reshape(NUM_SPHERES, 3), radii


def pd_torques(model: HandModel, q, qd, q_target):
    tau = model.stiffness * (np.asarray(q_target) - np.asarray(q)) - model.damping * np.asarray(qd)
    return np.clip(tau, -model.torque_limit, model.torque_limit)


# ============================================================================
# OBJECT GEOMETRY
# ============================================================================

def object_sdf(obj: ObjectModel, points):
    """Signed distance and outward unit gradient for object-frame points."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if obj.shape == 'sphere':
        radius = obj.dimensions[0]
        norm = np.linalg.norm(points, axis=-1)
        grad = _safe_unit(points, norm)
        return norm - radius, grad
    if obj.shape == 'capsule':
        radius, width = obj.dimensions
        along = np.clip(points[:, 2], -0.5 * width, 0.5 * width)
        offset = points - np.stack([np.zeros_like(along), np.zeros_like(along), along], -1)
        norm = np.linalg.norm(offset, axis=-1)
        return norm - radius, _safe_unit(offset, norm)
    if obj.shape == 'box':
        width, height = obj.dimensions
        half = np.array([0.5 * width, 0.5 * width, 0.5 * height])
        q = np.abs(points) - half
        outside = np.maximum(q, 0.0)
        outside_norm = np.linalg.norm(outside, axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        distance = outside_norm + inside
        sign = np.where(points >= 0.0, 1.0, -1.0)
        grad_out = sign * outside / np.where(outside_norm > 0, outside_norm, 1.0)[:, None]
        face = np.argmax(q, axis=-1)
        grad_in = np.zeros_like(points)
        grad_in[np.arange(len(points)), face] = sign[np.arange(len(points)), face]
        grad = np.where((outside_norm > 0)[:, None], grad_out, grad_in)
        return distance, grad
    raise InputDomainError(VALIDATION_ERRORS['BAD_SHAPE'].format(shape=obj.shape))


def _safe_unit(vectors, norms):
    fallback = np.zeros_like(vectors)
    fallback[:, 2] = 1.0
    return np.where((norms > 1e-12)[:, None], vectors / np.where(norms > 1e-12, norms, 1.0)[:, None], fallback)


def object_inertia(obj: ObjectModel):
    first, second = obj.dimensions
    if obj.shape == 'sphere':
        return 0.4 * obj.mass * first ** 2
    if obj.shape == 'capsule':
        return 0.4 * obj.mass * first ** 2 + obj.mass * second ** 2 / 18.0
    return obj.mass * (2.0 * first ** 2 + second ** 2) / 18.0


# ============================================================================
# DYNAMICS
# ============================================================================

def _jacobians(chain, centers):
    axes = chain['joint_axis']
    lever = centers[:, None, :] - chain['joint_pos'][None, :, :]
    return np.cross(axes[None, :, :], lever) * SPHERE_JOINT_MASK[..., None]


def _contact_forces(model, obj, chain, centers, radii, jac, qd, body, gravity, disturbance, h):
    """Penalty normal plus capped stick friction for every penetrating sphere.

    Returns forces on the finger spheres, the net object force and torque,
    and a per-sphere detail dict.
    """
    position, quat, linvel, angvel = body
    rot = quat_to_matrix(quat)
    com_world = position + rot @ obj.com
    local = (centers - position) @ rot
    sdf, grad = object_sdf(obj, local)
    penetration = radii - sdf
    active = penetration > 0.0
    finger_forces = np.zeros((NUM_SPHERES, 3))
    if not np.any(active):
        return finger_forces, np.zeros(3), np.zeros(3), {'active': active}

    normal = grad @ rot.T
    point = centers - normal * radii[:, None]
    finger_vel = np.einsum('sjc,j->sc', jac, qd)
    arm = point - com_world
    object_vel = linvel + np.cross(angvel, arm)
    relative = object_vel - finger_vel
    normal_speed = np.einsum('sc,sc->s', finger_vel - object_vel, normal)
    normal_mag = np.maximum(model.k_contact * penetration - model.contact_damping * normal_speed, 0.0)
    normal_mag = np.where(active, normal_mag, 0.0)

    n_active = int(np.count_nonzero(active))
    inertia = object_inertia(obj)
    # free acceleration of the object before friction
    free_acc = gravity + disturbance / obj.mass - np.sum(normal_mag[:, None] * normal, axis=0) / obj.mass
    tangent_vel = relative - np.einsum('sc,sc->s', relative, normal)[:, None] * normal
    tangent_acc = free_acc[None, :] - np.einsum('c,sc->s', free_acc, normal)[:, None] * normal
    speed = np.linalg.norm(tangent_vel, axis=-1)
    direction = np.where((speed > 1e-12)[:, None], tangent_vel / np.where(speed > 1e-12, speed, 1.0)[:, None], 0.0)
    inv_mass = 1.0 / obj.mass + np.sum(np.cross(arm, direction) ** 2, axis=-1) / inertia
    stick = -(tangent_vel / (h * n_active * inv_mass[:, None])) - obj.mass * tangent_acc / n_active
    stick_mag = np.linalg.norm(stick, axis=-1)
    cap = obj.friction * normal_mag
    scale = np.where(stick_mag > cap, cap / np.where(stick_mag > 0, stick_mag, 1.0), 1.0)
    friction_on_object = np.where(active[:, None], stick * scale[:, None], 0.0)

    object_forces = -normal_mag[:, None] * normal + friction_on_object
    finger_forces = -object_forces
    net_force = object_forces.sum(axis=0)
    net_torque = np.cross(arm, object_forces).sum(axis=0)
    detail = {
        'active': active, 'normal': normal, 'point': point, 'penetration': penetration,
        'normal_mag': normal_mag, 'finger_forces': finger_forces,
    }
    return finger_forces, net_force, net_torque, detail


def _records(chain, detail):
    if not np.any(detail['active']):
        return []
    records = []
    for s in np.flatnonzero(detail['active']):
        finger = int(SPHERE_FINGER[s])
        offset = detail['point'][s] - (chain['tip_pos'][finger] if SPHERE_IS_TIP[s] else detail['point'][s])
        local = chain['tip_rot'][finger].T @ offset if SPHERE_IS_TIP[s] else np.zeros(3)
        records.append(ContactRecord(
            finger=finger,
            is_tip=bool(SPHERE_IS_TIP[s]),
            segment=int(SPHERE_LINK[s]),
            local_position=local,
            world_point=detail['point'][s],
            world_normal=detail['normal'][s],
            force=detail['finger_forces'][s],
            penetration=float(detail['penetration'][s]),
        ))
    return records


def _check_finite(where, step, **arrays):
    for name, value in arrays.items():
        if value is not None and not np.all(np.isfinite(value)):
            raise SimulationFault(
                RUNTIME_ERRORS['NAN_STATE'].format(where=f"{where}.{name}", step=step),
                diagnostics={name: np.asarray(value).tolist()},
            )


def detect_contacts(model: HandModel, state: HandObjectState, obj: ObjectModel, dt=physics_dt):
    chain = _chain(model, state.q)
    centers, radii = _sphere_centers(model, chain)
    jac = _jacobians(chain, centers)
    body = (state.object_position, state.object_quat, state.object_linvel, state.object_angvel)
    h = dt / model.internal_substeps
    *_, detail = _contact_forces(model, obj, chain, centers, radii, jac, state.qd, body,
                                 state.gravity, state.disturbance, h)
    return _records(chain, detail)


def step(model: HandModel, state: HandObjectState, obj: Optional[ObjectModel], torques=None, dt=physics_dt):
    """Advance one physics step of length dt.

    With ``torques`` None the PD controller tracks ``state.q_target`` on every
    internal slice; explicit torques are held for the whole step.
    """
    if dt <= 0:
        raise InputDomainError(VALIDATION_ERRORS['BAD_DT'].format(dt=dt))
    _check_finite('input', state.step, q=state.q, qd=state.qd, q_target=state.q_target, torques=torques,
                  position=state.object_position, quat=state.object_quat, linvel=state.object_linvel,
                  angvel=state.object_angvel, gravity=state.gravity, disturbance=state.disturbance)

    h = dt / model.internal_substeps
    q = state.q.copy()
    qd = state.qd.copy()
    position = state.object_position.copy()
    quat = state.object_quat.copy()
    linvel = state.object_linvel.copy()
    angvel = state.object_angvel.copy()
    gravity = state.gravity
    applied = np.zeros(num_joints)
    clamped = False
    chain, detail = None, {'active': np.zeros(NUM_SPHERES, dtype=bool)}

    for _ in range(model.internal_substeps):
        chain = _chain(model, q)
        tau = pd_torques(model, q, qd, state.q_target) if torques is None else np.asarray(torques, dtype=np.float64)
        applied += tau / model.internal_substeps

        link_com = 0.5 * (chain['joint_pos'] + chain['link_end'])
        link_lever = link_com[:, None, :] - chain['joint_pos'][None, :, :]
        link_jac = np.cross(chain['joint_axis'][None, :, :], link_lever) * LINK_JOINT_MASK[..., None]
        tau_gravity = np.einsum('kjc,kc->j', link_jac, model.mass[:, None] * gravity[None, :])
        inertia = model.armature + np.einsum('kj,k->j', np.sum(link_jac ** 2, axis=-1), model.mass)

        tau_contact = np.zeros(num_joints)
        if obj is not None:
            centers, radii = _sphere_centers(model, chain)
            jac = _jacobians(chain, centers)
            rot = quat_to_matrix(quat)
            com_world = position + rot @ obj.com
            finger_forces, net_force, net_torque, detail = _contact_forces(
                model, obj, chain, centers, radii, jac, qd, (position, quat, linvel, angvel),
                gravity, state.disturbance, h,
            )
            tau_contact = np.einsum('sjc,sc->j', jac, finger_forces)

            linvel = linvel + h * (net_force / obj.mass + gravity + state.disturbance / obj.mass)
            angvel = angvel + h * net_torque / object_inertia(obj)
            com_world = com_world + h * linvel
            quat = quat_mul(quat_from_rotvec(angvel * h), quat)
            quat = quat / np.linalg.norm(quat)
            position = com_world - quat_to_matrix(quat) @ obj.com

        tau_friction = -model.friction * np.tanh(qd / joint_friction_velocity_scale)
        qdd = (tau + tau_gravity + tau_contact + tau_friction) / inertia
        qd = qd + h * qdd
        q = q + h * qd
        limited, hit = clamp_joints(model, q)
        if hit:
            clamped = True
            blocked = ((limited > q) & (qd < 0)) | ((limited < q) & (qd > 0))
            qd = np.where(blocked, 0.0, qd)
            q = limited

    _check_finite('output', state.step, q=q, qd=qd, position=position, quat=quat, linvel=linvel, angvel=angvel)
    contacts = _records(chain, detail) if obj is not None else []
    return state.model_copy(update={
        'q': q, 'qd': qd, 'object_position': position, 'object_quat': quat,
        'object_linvel': linvel, 'object_angvel': angvel, 'contacts': contacts,
        'step': state.step + 1, 'applied_torque': applied, 'clamped': clamped,
    })


def apply_disturbance(state: HandObjectState, rng, params):
    """Random pulse disturbance on the object, decaying between pulses."""
    if rng.random() < params.disturbance_probability:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        return params.disturbance_scale * params.object.mass * GRAVITY_MAGNITUDE * direction
    return state.disturbance * params.disturbance_decay


def initial_state(model: HandModel, q=None, object_position=None, object_quat=None, gravity=None):
    q = model.q0.copy() if q is None else np.asarray(q, dtype=np.float64)
    q, _ = clamp_joints(model, q)
    state = HandObjectState(q=q, qd=np.zeros(num_joints), q_target=q.copy())
    update = {}
    if object_position is not None:
        update['object_position'] = np.asarray(object_position, dtype=np.float64)
    if object_quat is not None:
        update['object_quat'] = np.asarray(object_quat, dtype=np.float64)
    if gravity is not None:
        update['gravity'] = np.asarray(gravity, dtype=np.float64)
    return state.model_copy(update=update)


# ============================================================================
# BACKEND INTERFACE
# ============================================================================

class SimulationBackend(Protocol):
    def forward_kinematics(self, model: HandModel, q): ...

    def detect_contacts(self, model: HandModel, state: HandObjectState, obj: ObjectModel): ...

    def step(self, model: HandModel, state: HandObjectState, obj: Optional[ObjectModel], torques=None,
             dt: float = physics_dt) -> HandObjectState: ...


class PenaltyBackend:
    """Default backend built on the module-level functions."""

    def forward_kinematics(self, model, q):
        return forward_kinematics(model, q)

    def fingertips(self, model, q):
        return fingertip_arrays(model, q)

    def detect_contacts(self, model, state, obj):
        return detect_contacts(model, state, obj)

    def step(self, model, state, obj, torques=None, dt=physics_dt):
        return step(model, state, obj, torques=torques, dt=dt)
