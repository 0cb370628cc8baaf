import math

import numpy as np
import pytest

from errors import InputDomainError
from rewards import (
    CurriculumTracker, RewardContext, compute_reward, compute_reward_alt, curriculum_coefficient, recompose_total,
    reward_kp, reward_rot, reward_terms,
)
from settings import CurriculumConfig, RewardConfig


def make_context(**overrides):
    values = dict(
        kp_dist=0.0, dtheta_k=0.01, tolerance=0.0075, tip_contacts=3, non_tip_contacts=0,
        angvel=np.array([0.0, 0.0, 0.3]), axis=np.array([0.0, 0.0, 1.0]), q=np.zeros(16), q0=np.zeros(16),
        torques=np.zeros(16), dq_target=np.zeros(16), q_target=np.zeros(16), terminated=0.0,
    )
    values.update(overrides)
    return RewardContext(**values)


def test_reward_kp_shape():
    assert reward_kp(0.0) == pytest.approx(0.25)
    assert reward_kp(0.2) < 1e-4
    assert reward_kp(0.01) < reward_kp(0.0)
    with pytest.raises(InputDomainError):
        reward_kp(-0.1)


def test_reward_rot_is_clipped():
    assert reward_rot(0.01) == pytest.approx(0.01)
    assert reward_rot(0.5) == pytest.approx(0.025)
    assert reward_rot(-0.5) == pytest.approx(-0.025)


def test_goal_bonus_and_total():
    breakdown = compute_reward(make_context())
    assert breakdown.r_goal == 1.0
    assert breakdown.r_gc == 1.0
    assert breakdown.r_kp == pytest.approx(0.25)
    assert breakdown.total == pytest.approx(recompose_total(breakdown))

    missed = compute_reward(make_context(kp_dist=0.05))
    assert missed.r_goal == 0.0


def test_termination_penalty():
    alive = compute_reward(make_context())
    dead = compute_reward(make_context(terminated=1.0))
    assert dead.r_penalty == -1.0
    assert alive.total - dead.total == pytest.approx(RewardConfig().weights['penalty'])


def test_curriculum_coefficient_scales_stability_terms():
    clean = make_context(lambda_rew=0.0)
    messy = make_context(lambda_rew=0.0, non_tip_contacts=2, q=np.full(16, 0.2), torques=np.full(16, 0.3))
    assert compute_reward(clean).total == pytest.approx(compute_reward(messy).total)
    assert compute_reward(make_context(lambda_rew=1.0)).total > compute_reward(
        make_context(lambda_rew=1.0, non_tip_contacts=2)).total
    with pytest.raises(InputDomainError):
        compute_reward(make_context(lambda_rew=1.5))


def test_angular_velocity_penalty_only_above_limit():
    slow = compute_reward(make_context(angvel=np.array([0.0, 0.0, 0.5])))
    fast = compute_reward(make_context(angvel=np.array([0.0, 0.0, 1.0])))
    assert slow.r_omega == 0.0
    assert fast.r_omega == pytest.approx(-0.4)


def test_alternative_form():
    breakdown = compute_reward_alt(make_context(angvel=np.array([0.0, 0.0, 2.0])))
    assert breakdown.r_kp == 0.0 and breakdown.r_goal == 0.0
    assert breakdown.r_av == pytest.approx(0.5)
    assert breakdown.r_axis == 0.0
    tilted = compute_reward_alt(make_context(object_axis=np.array([1.0, 0.0, 0.0])))
    assert tilted.r_axis == pytest.approx(-1.0)


def test_batched_terms():
    ctx = make_context(
        kp_dist=np.array([0.0, 0.05, 0.2]), dtheta_k=np.array([0.0, 0.01, 0.1]),
        tip_contacts=np.array([1, 2, 4]), non_tip_contacts=np.zeros(3), terminated=np.zeros(3),
        angvel=np.zeros((3, 3)), axis=np.tile([0.0, 0.0, 1.0], (3, 1)), q=np.zeros((3, 16)),
        q0=np.zeros(16), torques=np.zeros((3, 16)), dq_target=np.zeros((3, 16)), q_target=np.zeros((3, 16)),
    )
    terms = reward_terms(ctx)
    assert terms['total'].shape == (3,)
    assert list(terms['r_gc']) == [0.0, 1.0, 1.0]
    assert terms['r_rot'][2] == pytest.approx(0.025)


def test_curriculum_coefficient_values():
    assert curriculum_coefficient(0.5) == 0.0
    assert curriculum_coefficient(1.5) == pytest.approx(0.5)
    assert curriculum_coefficient(3.0) == 1.0
    with pytest.raises(InputDomainError):
        curriculum_coefficient(-1.0)


def test_curriculum_tracker():
    tracker = CurriculumTracker()
    assert tracker.lambda_rew == 0.0
    tracker.update([3] * 100)
    assert tracker.lambda_rew == 1.0
    assert CurriculumTracker(CurriculumConfig(enabled=False)).lambda_rew == 1.0


def straight_line_reward(d, dtheta, tol, tips, non_tips, angvel, q, q0, torques, dq_target, terminated, lam):
    r_kp = 1.0 / (math.exp(50.0 * d) + 2.0 + math.exp(-50.0 * d))
    r_rot = min(max(dtheta, -0.025), 0.025)
    r_goal = 1.0 if d < tol else 0.0
    r_gc = 1.0 if tips >= 2 else 0.0
    r_bc = 1.0 if non_tips > 0 else 0.0
    r_omega = -max(math.sqrt(sum(w * w for w in angvel)) - 0.6, 0.0)
    r_pose = -math.sqrt(sum((a - b) ** 2 for a, b in zip(q, q0)))
    r_work = -sum(t * dq for t, dq in zip(torques, dq_target))
    r_torque = -math.sqrt(sum(t * t for t in torques))
    r_penalty = -terminated
    return (1.0 * r_kp + 5.0 * r_rot + 10.0 * r_goal
            + lam * (0.1 * r_gc - 0.2 * r_bc + 0.5 * r_omega + 0.5 * r_pose + 0.1 * r_work + 0.05 * r_torque)
            + 50.0 * r_penalty)


def test_reward_matches_straight_line_recomputation():
    rng = np.random.default_rng(2024)
    n = 2000
    states = dict(
        kp_dist=rng.uniform(0.0, 0.1, n), dtheta_k=rng.normal(0.0, 0.03, n),
        tip_contacts=rng.integers(0, 5, n).astype(float), non_tip_contacts=rng.integers(0, 3, n).astype(float),
        angvel=rng.normal(0.0, 0.6, (n, 3)), q=rng.normal(0.0, 0.5, (n, 16)), q0=rng.normal(0.0, 0.5, (n, 16)),
        torques=rng.normal(0.0, 0.3, (n, 16)), dq_target=rng.normal(0.0, 0.05, (n, 16)),
        terminated=(rng.random(n) < 0.05).astype(float), lambda_rew=rng.uniform(0.0, 1.0, n),
    )
    tolerance = 0.0075
    ctx = RewardContext(
        tolerance=tolerance, axis=np.tile([0.0, 0.0, 1.0], (n, 1)), q_target=np.zeros((n, 16)), **states,
    )
    totals = reward_terms(ctx)['total']
    for i in range(n):
        expected = straight_line_reward(
            float(states['kp_dist'][i]), float(states['dtheta_k'][i]), tolerance,
            float(states['tip_contacts'][i]), float(states['non_tip_contacts'][i]), states['angvel'][i].tolist(),
            states['q'][i].tolist(), states['q0'][i].tolist(), states['torques'][i].tolist(),
            states['dq_target'][i].tolist(), float(states['terminated'][i]), float(states['lambda_rew'][i]),
        )
        assert totals[i] == pytest.approx(expected, abs=1e-10)
