try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from classes import GravityTrajectory, HandModel
from constants import (
    ALT_REWARD_WEIGHTS, GOAL_INCREMENT_CHOICES_DEG, GOAL_TOLERANCE_CHOICES, HAND_ORIENTATIONS, OBJECT_SETS,
    RANDOMIZATION_RANGES, REWARD_WEIGHTS, ROTATION_AXES, SYSID_PARAM_NAMES, action_clip, action_ema_eta,
    angvel_clip, axis_rest_epsilon, axis_window_steps, curriculum_ema, curriculum_goal_max, curriculum_goal_min,
    disturbance_decay, disturbance_probability, disturbance_scale, entropy_coef, episode_max_steps,
    eval_episodes_per_cell, fall_distance, fingertip_orientation_noise_std, fingertip_position_noise_std,
    force_noise_std, gae_tau, gamma, goal_increment_deg, goal_tolerance_scale, good_contact_min_tips, grad_norm,
    grasp_max_attempts, grasp_min_acceptance_rate, grasp_sim_steps, history_length, joint_noise_std, kl_threshold,
    kp_reward_a, kp_reward_b, max_axis_deviation_deg, minibatch_size, num_envs, object_friction, omega_max,
    physics_dt, physics_substeps_per_control, policy_units, pose_noise_std, ppo_clip, rollout_steps, rot_clip,
    student_goal_tolerance, student_lr, student_mini_epochs, stuck_seconds, sysid_sigma0,
    sysid_trajectory_steps, teacher_encoder_units, teacher_goal_tolerance, teacher_lr, teacher_mini_epochs,
    value_coef,
)
from errors import ConfigError

TactileMode = Literal['dense', 'dense_force', 'dense_pose', 'binary', 'proprio']


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class RewardConfig(Section):
    form: Literal['base', 'alt'] = 'base'
    weights: Dict[str, float] = Field(default_factory=lambda: dict(REWARD_WEIGHTS))
    alt_weights: Dict[str, float] = Field(default_factory=lambda: dict(ALT_REWARD_WEIGHTS))
    kp_a: float = kp_reward_a
    kp_b: float = kp_reward_b
    rot_clip: float = rot_clip
    angvel_clip: float = angvel_clip
    omega_max: float = omega_max
    # 'literal' penalizes speed below omega_max and work against the absolute target
    omega_form: Literal['excess', 'literal'] = 'excess'
    work_form: Literal['delta', 'literal'] = 'delta'
    good_contact_min_tips: int = good_contact_min_tips

    @field_validator('weights')
    @classmethod
    def check_weights(cls, value):
        missing = set(REWARD_WEIGHTS) - set(value)
        if missing:
            raise ValueError(f'missing reward weights: {sorted(missing)}')
        return value


class CurriculumConfig(Section):
    enabled: bool = True
    goal_min: float = curriculum_goal_min
    goal_max: float = curriculum_goal_max
    ema: float = Field(default=curriculum_ema, gt=0, le=1)


class TactileConfig(Section):
    mode: TactileMode = 'dense'
    pose_noise: float = pose_noise_std
    force_noise: float = force_noise_std


class RandomizationConfig(Section):
    enabled: bool = True
    object_set: Literal['train', 'ood_mass', 'ood_shape'] = 'train'
    shapes: List[Literal['capsule', 'box', 'sphere']] = Field(default_factory=lambda: ['capsule', 'box'])
    ranges: Dict[str, Tuple[float, float]] = Field(default_factory=lambda: dict(RANDOMIZATION_RANGES))
    joint_noise: float = joint_noise_std
    fingertip_position_noise: float = fingertip_position_noise_std
    fingertip_orientation_noise: float = fingertip_orientation_noise_std
    disturbance: bool = True
    disturbance_scale: float = disturbance_scale
    disturbance_probability: float = Field(default=disturbance_probability, ge=0, le=1)
    disturbance_decay: float = disturbance_decay
    friction: float = object_friction


class EnvConfig(Section):
    axis_mode: Literal['fixed', 'principal', 'sphere'] = 'fixed'
    axis: str = '+z'
    orientation_mode: Literal['fixed', 'random', 'rotating'] = 'fixed'
    gravity: GravityTrajectory = Field(default_factory=GravityTrajectory)
    goal_increment_deg: float = goal_increment_deg
    goal_tolerance: float = Field(default=teacher_goal_tolerance, gt=0)
    goal_tolerance_scale: float = Field(default=goal_tolerance_scale, gt=0)
    fall_distance: float = fall_distance
    max_axis_deviation_deg: float = max_axis_deviation_deg
    axis_window: int = Field(default=axis_window_steps, ge=2)
    axis_rest_epsilon: float = axis_rest_epsilon
    action_clip: float = action_clip
    action_eta: float = Field(default=action_ema_eta, gt=0, le=1)
    max_steps: int = episode_max_steps
    substeps: int = physics_substeps_per_control
    physics_dt: float = Field(default=physics_dt, gt=0)
    grasp_bank: Optional[Path] = None

    @field_validator('axis')
    @classmethod
    def check_axis(cls, value):
        if value not in ROTATION_AXES:
            raise ValueError(f'axis must be one of {sorted(ROTATION_AXES)}')
        return value

    @field_validator('goal_increment_deg')
    @classmethod
    def check_increment(cls, value):
        if value not in GOAL_INCREMENT_CHOICES_DEG:
            raise ValueError(f'goal_increment_deg must be one of {GOAL_INCREMENT_CHOICES_DEG}')
        return value

    @field_validator('goal_tolerance')
    @classmethod
    def check_tolerance(cls, value):
        if value not in GOAL_TOLERANCE_CHOICES:
            raise ValueError(f'goal_tolerance must be one of {GOAL_TOLERANCE_CHOICES}')
        return value

    @property
    def tolerance_m(self):
        return self.goal_tolerance * self.goal_tolerance_scale


class LearnConfig(Section):
    num_envs: int = num_envs
    rollout_steps: int = rollout_steps
    total_steps: int = 2_000_000
    minibatch_size: int = minibatch_size
    mini_epochs: int = teacher_mini_epochs
    lr: float = teacher_lr
    gamma: float = gamma
    tau: float = gae_tau
    clip: float = ppo_clip
    kl_threshold: float = kl_threshold
    kl_mode: Literal['adaptive', 'early_stop'] = 'adaptive'
    grad_norm: float = grad_norm
    value_coef: float = value_coef
    entropy_coef: float = entropy_coef
    encoder_units: Tuple[int, ...] = teacher_encoder_units
    policy_units: Tuple[int, ...] = policy_units
    normalize_obs: bool = True
    normalize_advantage: bool = True
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)


class DistillConfig(Section):
    num_envs: int = num_envs
    rollout_steps: int = rollout_steps
    total_steps: int = 200_000
    lr: float = student_lr
    mini_epochs: int = student_mini_epochs
    goal_tolerance: float = Field(default=student_goal_tolerance, gt=0)
    history: int = history_length
    holdout_steps: int = 256

    @field_validator('goal_tolerance')
    @classmethod
    def check_tolerance(cls, value):
        if value not in GOAL_TOLERANCE_CHOICES:
            raise ValueError(f'goal_tolerance must be one of {GOAL_TOLERANCE_CHOICES}')
        return value


class SysIdConfig(Section):
    orientations: List[str] = Field(default_factory=lambda: list(HAND_ORIENTATIONS))
    signals: List[Literal['step', 'chirp']] = Field(default_factory=lambda: ['step', 'chirp'])
    steps: int = sysid_trajectory_steps
    sigma0: float = Field(default=sysid_sigma0, gt=0)
    max_generations: int = 150
    popsize: Optional[int] = None
    free_joints: Union[Literal['all'], List[int]] = 'all'
    free_params: List[str] = Field(default_factory=lambda: list(SYSID_PARAM_NAMES))
    perturbation: float = 0.3
    trajectories: Optional[Path] = None

    @field_validator('orientations')
    @classmethod
    def check_orientations(cls, value):
        unknown = [name for name in value if name not in HAND_ORIENTATIONS]
        if unknown:
            raise ValueError(f'unknown hand orientations: {unknown}')
        return value

    @field_validator('free_params')
    @classmethod
    def check_params(cls, value):
        unknown = [name for name in value if name not in SYSID_PARAM_NAMES]
        if unknown:
            raise ValueError(f'unknown parameters: {unknown}')
        return value


class GraspConfig(Section):
    count: int = 100
    max_attempts: int = Field(default=grasp_max_attempts, gt=0)
    min_acceptance: float = grasp_min_acceptance_rate
    sim_steps: int = grasp_sim_steps
    objects: int = 1


class EvalConfig(Section):
    episodes_per_cell: int = eval_episodes_per_cell
    orientations: List[str] = Field(default_factory=lambda: list(HAND_ORIENTATIONS))
    axes: List[str] = Field(default_factory=lambda: ['+z'])
    object_sets: List[Literal['train', 'ood_mass', 'ood_shape']] = Field(default_factory=lambda: list(OBJECT_SETS))
    rotating: bool = False
    stuck_seconds: float = stuck_seconds
    log_episodes: bool = True


class RunConfig(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix='ROT_', env_nested_delimiter='__', env_file='.env', extra='forbid',
    )

    name: str = 'rot'
    seed: int = 0
    out: Path = Path('runs')
    threads: int = Field(default=1, ge=1)
    env: EnvConfig = Field(default_factory=EnvConfig)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    tactile: TactileConfig = Field(default_factory=TactileConfig)
    randomization: RandomizationConfig = Field(default_factory=RandomizationConfig)
    learn: LearnConfig = Field(default_factory=LearnConfig)
    distill: DistillConfig = Field(default_factory=DistillConfig)
    sysid: SysIdConfig = Field(default_factory=SysIdConfig)
    grasp: GraspConfig = Field(default_factory=GraspConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    hand: HandModel = Field(default_factory=HandModel)

    @classmethod
    def from_toml(cls, path=None, **overrides):
        data = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f'Config file not found: {path}')
            try:
                with path.open('rb') as handle:
                    data = tomllib.load(handle)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f'Invalid TOML in {path}: {e}') from e
        data.update({key: value for key, value in overrides.items() if value is not None})
        try:
            return cls(**data)
        except ValidationError as e:
            raise ConfigError(f'Invalid configuration: {e}') from e

    def run_dir(self):
        return Path(self.out)
