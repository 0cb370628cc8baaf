import numpy as np
import pytest

from classes import ObjectModel
from constants import finger_base_radius, fingertip_radius, num_fingers
from errors import InputDomainError, SimulationFault
from handsim import (
    clamp_joints, detect_contacts, fingertip_arrays, forward_kinematics, initial_state, object_sdf, pd_torques, step,
)


def test_forward_kinematics_canonical_pose(hand):
    poses, clamped = forward_kinematics(hand, hand.q0)
    assert not clamped
    assert len(poses) == num_fingers
    tips = np.stack([pose.position for pose in poses])
    # fingers curl inward above the palm
    assert np.all(tips[:, 2] > 0.0)
    assert np.all(np.linalg.norm(tips[:, :2], axis=-1) < finger_base_radius)


def test_forward_kinematics_clamps_out_of_range_joints(hand):
    q = hand.q0.copy()
    q[1] = 5.0
    _, clamped = forward_kinematics(hand, q)
    limited, hit = clamp_joints(hand, q)
    assert clamped and hit
    assert limited[1] == pytest.approx(hand.joint_upper[1])


def test_pd_torques_respect_limit(hand):
    tau = pd_torques(hand, hand.q0, np.zeros(16), hand.q0 + 10.0)
    assert np.all(np.abs(tau) <= hand.torque_limit + 1e-12)


def test_object_sdf_shapes():
    sphere = ObjectModel(shape='sphere', dimensions=(0.03, 0.0))
    distance, grad = object_sdf(sphere, [[0.05, 0.0, 0.0]])
    assert distance[0] == pytest.approx(0.02)
    assert np.allclose(grad[0], [1.0, 0.0, 0.0])

    capsule = ObjectModel(shape='capsule', dimensions=(0.03, 0.01))
    distance, _ = object_sdf(capsule, [[0.0, 0.0, 0.045]])
    assert distance[0] == pytest.approx(0.01)

    box = ObjectModel(shape='box', dimensions=(0.05, 0.05))
    distance, grad = object_sdf(box, [[0.0, 0.0, 0.0], [0.0, 0.035, 0.0]])
    assert distance[0] == pytest.approx(-0.025)
    assert distance[1] == pytest.approx(0.01)
    assert np.allclose(grad[1], [0.0, 1.0, 0.0])


def test_step_without_object(hand):
    state = initial_state(hand)
    after = step(hand, state, None)
    assert after.step == 1
    assert after.contacts == []
    assert np.all(np.isfinite(after.q))


def test_step_rejects_bad_dt(hand):
    with pytest.raises(InputDomainError):
        step(hand, initial_state(hand), None, dt=0.0)


def test_step_raises_on_non_finite_state(hand):
    state = initial_state(hand)
    state = state.model_copy(update={'qd': np.full(16, np.nan)})
    with pytest.raises(SimulationFault):
        step(hand, state, None)


def test_contact_on_single_fingertip(hand):
    tips, _ = fingertip_arrays(hand, hand.q0)
    obj = ObjectModel(shape='sphere', dimensions=(0.03, 0.0))
    center = tips[0] + np.array([0.0, 0.0, 0.035])
    state = initial_state(hand, None, center, np.array([1.0, 0.0, 0.0, 0.0]))
    contacts = detect_contacts(hand, state, obj)
    assert contacts
    assert all(c.finger == 0 and c.is_tip for c in contacts)
    assert np.linalg.norm(contacts[0].local_position) == pytest.approx(fingertip_radius, abs=1e-9)


def test_no_contacts_when_object_is_far(hand):
    obj = ObjectModel(shape='sphere', dimensions=(0.03, 0.0))
    state = initial_state(hand, None, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0, 0.0]))
    assert detect_contacts(hand, state, obj) == []
