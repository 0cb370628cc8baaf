import numpy as np
import pytest

from classes import HandModel
from settings import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hand():
    return HandModel()


@pytest.fixture
def small_config(tmp_path):
    """Short episodes, no randomization noise and tiny networks."""
    return RunConfig.from_toml(None, **{
        'out': tmp_path / 'runs',
        'env': {'max_steps': 5},
        'randomization': {'enabled': False},
        'learn': {
            'num_envs': 2, 'rollout_steps': 4, 'total_steps': 8, 'minibatch_size': 4, 'mini_epochs': 1,
            'encoder_units': [8, 4], 'policy_units': [16],
        },
        'distill': {'num_envs': 2, 'rollout_steps': 4, 'total_steps': 8, 'holdout_steps': 4},
        'sysid': {
            'orientations': ['palm_up'], 'signals': ['step'], 'steps': 10, 'max_generations': 3,
            'free_joints': [0], 'free_params': ['stiffness', 'damping'], 'popsize': 4,
        },
        'eval': {'episodes_per_cell': 1, 'orientations': ['palm_up'], 'axes': ['+z'], 'object_sets': ['train']},
    })


SMALL_CONFIG_TOML = """
name = "cli"

[env]
max_steps = 5

[randomization]
enabled = false

[learn]
num_envs = 2
rollout_steps = 4
total_steps = 8
minibatch_size = 4
mini_epochs = 1
encoder_units = [8, 4]
policy_units = [16]

[distill]
num_envs = 2
rollout_steps = 4
total_steps = 8
holdout_steps = 4

[sysid]
orientations = ["palm_up"]
signals = ["step"]
steps = 10
max_generations = 3
free_joints = [0]
free_params = ["stiffness", "damping"]
popsize = 4

[eval]
episodes_per_cell = 1
orientations = ["palm_up"]
axes = ["+z"]
object_sets = ["train"]
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text(SMALL_CONFIG_TOML)
    return path
