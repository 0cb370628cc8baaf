import math

# ============================================================================
# SIMULATION TIMING
# ============================================================================

physics_dt = 1.0 / 60.0
physics_substeps_per_control = 3
control_hz = 20
episode_max_steps = 600

# Internal integration slices per physics step
sim_internal_substeps = 8

GRAVITY_MAGNITUDE = 9.81

# ============================================================================
# ROTATION MATH
# ============================================================================

keypoint_radius = 0.05

# Object-frame keypoints: +x, -x, +y, -y, +z, -z
CANONICAL_KEYPOINTS = (
    (keypoint_radius, 0.0, 0.0),
    (-keypoint_radius, 0.0, 0.0),
    (0.0, keypoint_radius, 0.0),
    (0.0, -keypoint_radius, 0.0),
    (0.0, 0.0, keypoint_radius),
    (0.0, 0.0, -keypoint_radius),
)

unit_tolerance = 1e-9
axis_rest_epsilon = 0.005
axis_window_steps = 10

# ============================================================================
# HAND GEOMETRY AND JOINT DYNAMICS
# ============================================================================

num_fingers = 4
joints_per_finger = 4
num_joints = num_fingers * joints_per_finger

# Finger bases sit on a circle in the palm plane, z points out of the palm
finger_base_radius = 0.092
finger_base_angles = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)

link_lengths = (0.015, 0.045, 0.035, 0.03)
fingertip_radius = 0.012
link_radius = 0.01

joint_lower_limits = (-0.47, -0.3, -0.3, -0.3)
joint_upper_limits = (0.47, 1.6, 1.7, 1.8)

canonical_finger_pose = (0.0, 0.1, 0.6, 0.9)

default_stiffness = 3.0
default_damping = 0.1
default_link_mass = 0.02
default_joint_friction = 0.01
default_armature = 0.001
joint_friction_velocity_scale = 0.05

k_contact = 1000.0
contact_damping = 2.0
torque_limit = 0.7
object_friction = 1.0

# Fractions along links 0..2 where non-tip collision spheres are placed
non_tip_sample_fractions = (0.5, 1.0)

# ============================================================================
# OBJECTS
# ============================================================================

OBJECT_SHAPES = ('capsule', 'box', 'sphere')

default_object_mass = 0.1
object_spawn_height = 0.13

# ============================================================================
# TACTILE PROCESSING
# ============================================================================

contact_force_threshold = 0.25
force_ema_alpha = 0.5
force_scale = 0.6
force_min = 0.0
force_max = 5.0
pose_scale = 0.6
pose_limit = 0.53
pose_noise_std = 0.0174
force_noise_std = 0.1
contact_surface_tolerance = 1e-6

# Sensor mounting offsets about the fingertip axis, degrees
sensor_roll_offsets_deg = (-45.0, -45.0, 0.0, 45.0)

# ============================================================================
# TACTILE IMAGES
# ============================================================================

tactile_image_height = 135
tactile_image_width = 240
image_background = 0.2
marker_amplitude = 0.8
marker_sigma_px = 3.5
marker_spacing_px = 20
marker_max_shift_px = 15.0
marker_shift_per_newton = 5.0
deformation_radius_px = 60.0
deformation_radius_per_newton = 25.0
# Pixels of contact-center shift per radian of contact pose
pose_shift_px_per_rad = 120.0
image_noise_std = 0.01

median_aperture = 11
threshold_block_size = 55
threshold_offset = -2.0 / 255.0
ssim_contact_threshold = 0.6
ssim_gaussian_sigma = 1.5

# ============================================================================
# ACTIONS, GOALS AND TERMINATION
# ============================================================================

action_clip = 0.026
action_ema_eta = 0.8

goal_increment_deg = 30.0
GOAL_INCREMENT_CHOICES_DEG = (30.0, 40.0, 50.0)
teacher_goal_tolerance = 0.15
student_goal_tolerance = 0.25
GOAL_TOLERANCE_CHOICES = (0.15, 0.20, 0.25)
goal_tolerance_scale = keypoint_radius

fall_distance = 0.1
max_axis_deviation_deg = 45.0

TERMINATION_CAUSES = ('continue', 'fell', 'axis_deviated', 'timeout')

# ============================================================================
# REWARD WEIGHTS
# ============================================================================

REWARD_WEIGHTS = {
    'kp': 1.0,
    'rot': 5.0,
    'goal': 10.0,
    'gc': 0.1,
    'bc': 0.2,
    'omega': 0.5,
    'pose': 0.5,
    'work': 0.1,
    'torque': 0.05,
    'penalty': 50.0,
}

ALT_REWARD_WEIGHTS = {
    'av': 1.5,
    'axis': 1.0,
    'omega': 0.0,
}

kp_reward_a = 50.0
kp_reward_b = 2.0
rot_clip = 0.025
angvel_clip = 0.5
omega_max = 0.6
good_contact_min_tips = 2

# ============================================================================
# CURRICULUM
# ============================================================================

curriculum_goal_min = 1.0
curriculum_goal_max = 2.0
curriculum_ema = 0.1

# ============================================================================
# DOMAIN RANDOMIZATION
# ============================================================================

RANDOMIZATION_RANGES = {
    'capsule_radius': (0.025, 0.034),
    'capsule_width': (0.0, 0.012),
    'box_width': (0.045, 0.06),
    'box_height': (0.045, 0.06),
    'mass': (0.025, 0.2),
    'com': (-0.01, 0.01),
    'pd_scale': (0.9, 1.1),
}

OOD_RANGES = {
    'mass': (0.2, 0.4),
    'sphere_radius': (0.026, 0.034),
    'box_width': (0.04, 0.05),
    'box_height': (0.065, 0.075),
}

OBJECT_SETS = ('train', 'ood_mass', 'ood_shape')

joint_noise_std = 0.03
fingertip_position_noise_std = 0.005
fingertip_orientation_noise_std = 0.01

disturbance_scale = 2.0
disturbance_probability = 0.25
disturbance_decay = 0.99

# ============================================================================
# HAND ORIENTATIONS
# ============================================================================

# Direction of gravity expressed in the hand frame for each named orientation
HAND_ORIENTATIONS = {
    'palm_up': (0.0, 0.0, -1.0),
    'palm_down': (0.0, 0.0, 1.0),
    'thumb_up': (0.0, -1.0, 0.0),
    'thumb_down': (0.0, 1.0, 0.0),
    'base_up': (1.0, 0.0, 0.0),
    'base_down': (-1.0, 0.0, 0.0),
}

ROTATION_AXES = {
    '+x': (1.0, 0.0, 0.0),
    '-x': (-1.0, 0.0, 0.0),
    '+y': (0.0, 1.0, 0.0),
    '-y': (0.0, -1.0, 0.0),
    '+z': (0.0, 0.0, 1.0),
    '-z': (0.0, 0.0, -1.0),
}

# ============================================================================
# GRASP GENERATION
# ============================================================================

grasp_joint_noise = 0.3
grasp_sim_steps = 120
grasp_min_tip_contacts = 3
grasp_max_tip_distance = 0.2
grasp_settle_linear_speed = 0.05
grasp_settle_angular_speed = 1.0
grasp_min_acceptance_rate = 0.001
grasp_max_attempts = 100000

# Palm-up is last so the stored pose is the palm-up settled state
GRASP_GRAVITY_SEQUENCE = ('base_up', 'base_down', 'thumb_up', 'thumb_down', 'palm_down', 'palm_up')

GRASP_REJECTION_REASONS = (
    'non_tip_contact', 'few_tip_contacts', 'far_from_tips', 'fell', 'unstable', 'sim_fault'
)

# ============================================================================
# LEARNING
# ============================================================================

latent_dim = 8
teacher_encoder_units = (256, 128, latent_dim)
policy_units = (512, 256, 128)
history_length = 30
tcn_kernels = (9, 5, 5)
tcn_strides = (2, 1, 1)

teacher_lr = 5e-3
student_lr = 3e-4
min_lr = 1e-6
max_lr = 1e-2
gamma = 0.99
gae_tau = 0.95
ppo_clip = 0.2
kl_threshold = 0.02
grad_norm = 1.0
value_coef = 0.5
entropy_coef = 0.0
teacher_mini_epochs = 5
student_mini_epochs = 1
rollout_steps = 8
num_envs = 64
minibatch_size = 512
initial_log_std = 0.0
kl_divergence_factor = 10.0
kl_divergence_patience = 3
adam_betas = (0.9, 0.999)
adam_eps = 1e-8

# ============================================================================
# SYSTEM IDENTIFICATION
# ============================================================================

SYSID_PARAM_NAMES = ('stiffness', 'damping', 'mass', 'friction', 'armature')

SYSID_BOUNDS = {
    'stiffness': (0.5, 10.0),
    'damping': (0.01, 1.0),
    'mass': (0.005, 0.1),
    'friction': (1e-4, 0.1),
    'armature': (1e-4, 0.01),
}

sysid_sigma0 = 0.3
sysid_trajectory_steps = 40
chirp_amplitude = 0.2
chirp_start_hz = 0.2
chirp_end_hz = 2.0
step_amplitude = 0.25

# ============================================================================
# EVALUATION
# ============================================================================

stuck_seconds = 10.0
eval_episodes_per_cell = 20

# ============================================================================
# CHECKPOINT FORMAT
# ============================================================================

CHECKPOINT_MAGIC = b'ROTCKPT1'
CHECKPOINT_VERSION = 1

# ============================================================================
# LOGGING CONSTANTS
# ============================================================================

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# ============================================================================
# ERROR HANDLING CONSTANTS
# ============================================================================

VALIDATION_ERRORS = {
    'NON_UNIT_AXIS': 'Rotation axis must be unit length (norm={norm:.12f})',
    'ANGLE_RANGE': 'Rotation angle must satisfy |theta| <= pi (got {theta})',
    'ZERO_QUATERNION': 'Quaternion has zero norm',
    'OFF_SURFACE': 'Contact point is {error:.3e} m off the fingertip surface',
    'BAD_SHAPE': 'Unknown object shape {shape!r}',
    'DIM_MISMATCH': 'Input dimension {got} does not match network input {expected}',
    'IMAGE_SIZE': 'Tactile images must be {expected}, got {got}',
    'NEGATIVE_DISTANCE': 'Keypoint distance must be non-negative (got {value})',
    'SIGMA0': 'Initial step size must be positive (got {sigma0})',
    'EMPTY_PAIRS': 'At least one trajectory pair is required',
    'PAIR_LENGTH': 'Trajectory pair lengths differ ({targets} targets vs {reference} reference steps)',
    'BAD_DT': 'Time step must be positive (got {dt})',
    'LAMBDA_RANGE': 'Curriculum coefficient must lie in [0, 1] (got {value})',
    'UNKNOWN_ORIENTATION': 'Unknown hand orientation {name!r}',
    'UNKNOWN_MODE': 'Unknown {kind} mode {mode!r}',
    'UNKNOWN_CAUSE': 'Unknown termination cause {cause!r}',
}

RUNTIME_ERRORS = {
    'NAN_STATE': 'Non-finite value in {where} at step {step}',
    'NAN_GRADIENT': 'Non-finite gradient for parameter {name}',
    'KL_DIVERGENCE': 'Approximate KL {kl:.4f} exceeded {limit:.4f} on {count} consecutive updates',
    'ENV_DONE': 'Environment episode is finished; call reset() first',
    'ALL_INVALID': 'Every candidate in generation {generation} returned a non-finite objective',
    'LOW_ACCEPTANCE': 'Grasp acceptance rate {rate:.5f} after {attempts} attempts is below {minimum}',
    'CHECKPOINT_MAGIC': 'File {path} is not a rotation checkpoint',
    'CHECKPOINT_MISMATCH': 'Checkpoint parameter {name} has shape {got}, expected {expected}',
    'EMPTY_BANK': 'Grasp bank {path} contains no entries',
}

CLI_MESSAGES = {
    'MISSING_FILE': 'Required input file not found: {path}',
    'RUN_COMPLETE': 'Artifacts written to {path}',
    'TOLERANCE_WARNING': 'Student distillation uses goal tolerance {tol}, the same as the teacher; expected a relaxed tolerance',
}

# ============================================================================
# ARTIFACT NAMES AND COLUMNS
# ============================================================================

ARTIFACT_FILES = {
    'config': 'config.json',
    'log': 'run.log',
    'grasp_bank': 'grasps.jsonl',
    'teacher_checkpoint': 'teacher.ckpt',
    'student_checkpoint': 'student.ckpt',
    'training_curve': 'training_curve.csv',
    'distill_curve': 'distill_curve.csv',
    'episodes': 'episodes.csv',
    'summary': 'summary.csv',
    'episode_logs': 'episode_logs.jsonl',
    'trajectory_pairs': 'trajectory_pairs.jsonl',
    'convergence': 'convergence.csv',
    'hand_model': 'hand_model.toml',
    'tactile_images': 'tactile',
}

TRAINING_CURVE_COLUMNS = [
    'iteration', 'env_steps', 'mean_return', 'mean_goals', 'mean_rotations',
    'lambda_rew', 'approx_kl', 'policy_loss', 'value_loss', 'learning_rate',
]

TACTILE_COLUMNS = (
    [f'c{i + 1}' for i in range(num_fingers)]
    + [f'{axis}{i + 1}' for i in range(num_fingers) for axis in ('Rx', 'Ry')]
    + [f'F{i + 1}' for i in range(num_fingers)]
)

REWARD_TERM_COLUMNS = [
    'r_kp', 'r_rot', 'r_goal', 'r_gc', 'r_bc', 'r_omega', 'r_pose', 'r_work',
    'r_torque', 'r_penalty', 'r_av', 'r_axis', 'lambda_rew', 'total',
]

EPISODE_COLUMNS = [
    'episode', 'orientation', 'axis', 'object_set', 'rotations', 'ttt', 'cause', 'goals',
]
