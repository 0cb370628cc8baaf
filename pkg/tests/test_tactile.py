import math

import numpy as np
import pytest

from classes import ContactRecord, RawContact, TactileFrame
from constants import fingertip_radius, num_fingers, pose_limit, pose_scale
from errors import InputDomainError
from tactile import (
    assemble_tactile, binary_contact, clip_rescale_force, clip_rescale_pose, contact_pose_from_local, ema_force,
    raw_contacts_from_records,
)


def test_binary_contact_threshold():
    assert binary_contact([0.3, 0.0, 0.0]) == 1
    assert binary_contact([0.2, 0.0, 0.0]) == 0
    assert list(binary_contact([[0.0, 0.3, 0.0], [0.0, 0.0, 0.1]])) == [1, 0]


def test_ema_force_blends_half_and_half():
    assert np.allclose(ema_force([2.0, 0.0, 0.0], [0.0, 2.0, 0.0]), [1.0, 1.0, 0.0])


def test_clip_and_rescale():
    assert clip_rescale_force(10.0) == pytest.approx(3.0)
    assert clip_rescale_force(-1.0) == pytest.approx(0.0)
    assert clip_rescale_pose(1.0) == pytest.approx(pose_scale * pose_limit)
    assert clip_rescale_pose(-0.1) == pytest.approx(-0.06)


def test_contact_pose_on_dome():
    r = fingertip_radius
    assert contact_pose_from_local([0.0, 0.0, r]) == pytest.approx((0.0, 0.0), abs=1e-12)
    r_x, r_y = contact_pose_from_local([r * math.sin(0.2), 0.0, r * math.cos(0.2)])
    assert r_y == pytest.approx(0.2)
    assert r_x == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InputDomainError):
        contact_pose_from_local([0.0, 0.0, 2 * r])


def test_assemble_masks_fingers_without_contact():
    raw = [RawContact() for _ in range(num_fingers)]
    raw[0] = RawContact(force=np.array([1.0, 0.0, 0.0]), local_position=np.array([0.0, 0.0, fingertip_radius]))
    frame = assemble_tactile(raw, TactileFrame())
    assert list(frame.contact) == [1.0, 0.0, 0.0, 0.0]
    # filtered force 0.5 N rescaled by 0.6
    assert frame.force[0] == pytest.approx(0.3)
    assert np.allclose(frame.pose, 0.0)
    assert np.allclose(frame.force[1:], 0.0)
    assert frame.flat().shape == (4 * num_fingers,)


def test_assemble_delays_contact_onset():
    raw = [RawContact() for _ in range(num_fingers)]
    raw[2] = RawContact(force=np.array([0.0, 0.0, 0.4]), local_position=np.array([0.0, 0.0, fingertip_radius]))
    first = assemble_tactile(raw, TactileFrame())
    second = assemble_tactile(raw, first)
    # 0.2 N after one step is below threshold, 0.3 N after two is above
    assert first.contact[2] == 0.0
    assert second.contact[2] == 1.0


def test_noise_stays_inside_ranges(rng):
    raw = [RawContact(force=np.array([0.0, 0.0, 20.0]), local_position=np.array([0.0, 0.0, fingertip_radius]))
           for _ in range(num_fingers)]
    frame = TactileFrame()
    for _ in range(20):
        frame = assemble_tactile(raw, frame, noise_rng=rng, pose_noise=0.5, force_noise=5.0)
    assert np.all(frame.force <= 3.0) and np.all(frame.force >= 0.0)
    assert np.all(np.abs(frame.pose) <= pose_scale * pose_limit + 1e-12)


def test_raw_contacts_keep_only_fingertips():
    common = dict(world_point=np.zeros(3), world_normal=np.array([0.0, 0.0, 1.0]), force=np.array([0.0, 0.0, 1.0]))
    records = [
        ContactRecord(finger=2, is_tip=True, local_position=np.array([0.001, 0.0, 0.0119]), **common),
        ContactRecord(finger=1, is_tip=False, segment=1, local_position=np.zeros(3), **common),
    ]
    raw = raw_contacts_from_records(records)
    assert raw[1].local_position is None
    # finger 2 has no mounting roll
    assert np.allclose(raw[2].local_position, [0.001, 0.0, 0.0119])
