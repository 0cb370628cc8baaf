import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from classes import Pose, Quaternion, UnitVector3
from errors import InputDomainError
from rotmath import (
    axis_deviation, delta_rotation_about_axis, keypoint_distance, keypoints_of, quat_apply, quat_from_axis_angle,
    quat_from_rotvec, quat_to_rotvec, rotate_about_axis,
)

Z = UnitVector3(x=0.0, y=0.0, z=1.0)
X = UnitVector3(x=1.0, y=0.0, z=0.0)


def about(axis, angle):
    return Quaternion.from_array(quat_from_axis_angle(np.asarray(axis, dtype=float), angle))


def test_rotate_about_axis_quarter_turn():
    q = rotate_about_axis(Quaternion.identity(), Z, math.pi / 2)
    assert q.w == pytest.approx(math.cos(math.pi / 4))
    assert q.z == pytest.approx(math.sin(math.pi / 4))
    assert q.x == pytest.approx(0.0) and q.y == pytest.approx(0.0)


def test_rotate_about_axis_rejects_bad_inputs():
    with pytest.raises(InputDomainError):
        rotate_about_axis(Quaternion.identity(), [1.0, 1.0, 0.0], 0.1)
    with pytest.raises(InputDomainError):
        rotate_about_axis(Quaternion.identity(), Z, 4.0)


def test_quat_apply_matches_scipy(rng):
    q = Rotation.random(random_state=7).as_quat(scalar_first=True)
    v = rng.normal(size=(5, 3))
    expected = Rotation.from_quat(q, scalar_first=True).apply(v)
    assert np.allclose(quat_apply(q[None, :], v), expected)


def test_rotvec_conversion_is_consistent():
    v = np.array([0.1, -0.2, 0.3])
    assert np.allclose(quat_to_rotvec(quat_from_rotvec(v)), v)
    # q and -q give the same rotation vector
    assert np.allclose(quat_to_rotvec(-quat_from_rotvec(v)), v)


def test_keypoint_distance_translation_and_sign():
    a = Pose(position=np.zeros(3), orientation=about([0, 1, 0], 0.7))
    shifted = Pose(position=np.array([0.01, 0.0, 0.0]), orientation=a.orientation)
    flipped = Pose(position=np.zeros(3), orientation=-a.orientation)
    assert keypoint_distance(keypoints_of(a), keypoints_of(a)) == pytest.approx(0.0)
    assert keypoint_distance(keypoints_of(a), keypoints_of(shifted)) == pytest.approx(0.01)
    assert keypoint_distance(keypoints_of(a), keypoints_of(flipped)) == pytest.approx(0.0, abs=1e-12)


def test_keypoint_distance_grows_with_angle():
    base = keypoints_of(Pose())
    small = keypoint_distance(base, keypoints_of(Pose(orientation=about([0, 0, 1], 0.1))))
    large = keypoint_distance(base, keypoints_of(Pose(orientation=about([0, 0, 1], 0.5))))
    assert 0.0 < small < large


def test_delta_rotation_about_axis_signs():
    start = Quaternion.identity()
    assert delta_rotation_about_axis(start, about([0, 0, 1], 0.1), Z) == pytest.approx(0.1)
    assert delta_rotation_about_axis(start, about([0, 0, 1], -0.1), Z) == pytest.approx(-0.1)
    assert delta_rotation_about_axis(start, about([0, 0, 1], 0.1), X) == pytest.approx(0.0, abs=1e-12)


def test_axis_deviation_cases():
    about_z = [about([0, 0, 1], 0.05 * i) for i in range(10)]
    about_x = [about([1, 0, 0], 0.05 * i) for i in range(10)]
    backwards = [about([0, 0, 1], -0.05 * i) for i in range(10)]
    rest = [Quaternion.identity()] * 10

    assert axis_deviation(about_z, Z) == pytest.approx(0.0, abs=1e-6)
    assert axis_deviation(about_x, Z) == pytest.approx(math.pi / 2)
    assert axis_deviation(rest, Z) == 0.0
    assert axis_deviation(backwards, Z) == pytest.approx(0.0, abs=1e-6)
    assert axis_deviation(backwards, Z, signed=True) == pytest.approx(math.pi)


def test_axis_deviation_needs_two_orientations():
    with pytest.raises(InputDomainError):
        axis_deviation([Quaternion.identity()], Z)
