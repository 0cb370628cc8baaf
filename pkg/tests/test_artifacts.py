import numpy as np
import pytest

from artifacts import (
    load_grasp_bank, load_trajectory_pairs, prepare_run_dir, read_csv, read_hand_toml, read_jsonl, read_pgm,
    save_grasp_bank, save_trajectory_pairs, write_csv, write_hand_toml, write_jsonl, write_pgm,
)
from classes import GraspEntry, ObjectModel
from errors import ConfigError, GraspBankError
from settings import RunConfig
from sysid import hand_to_params, params_to_hand, synthesize_pairs


def make_entry(hand, index=0):
    return GraspEntry(
        object=ObjectModel(shape='box', dimensions=(0.03, 0.02), mass=0.12), seed=7, index=index,
        position=np.array([0.0, 0.01, 0.11]), orientation=np.array([1.0, 0.0, 0.0, 0.0]), q=hand.q0,
    )


def test_grasp_bank_round_trip(tmp_path, hand):
    path = save_grasp_bank(tmp_path / 'bank.jsonl', [make_entry(hand, 0), make_entry(hand, 1)])
    bank = load_grasp_bank(path)
    assert [entry.index for entry in bank] == [0, 1]
    assert bank[0].object.shape == 'box'
    assert np.allclose(bank[1].q, hand.q0)
    assert not list(tmp_path.glob('*.tmp'))


def test_missing_and_empty_banks(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_jsonl(tmp_path / 'absent.jsonl')
    empty = write_jsonl(tmp_path / 'empty.jsonl', [])
    with pytest.raises(GraspBankError):
        load_grasp_bank(empty)


def test_trajectory_pairs_round_trip(tmp_path, hand):
    pairs = synthesize_pairs(hand, ['palm_down'], signals=('chirp',), steps=4)
    loaded = load_trajectory_pairs(save_trajectory_pairs(tmp_path / 'pairs.jsonl', pairs))
    assert loaded[0].orientation == 'palm_down'
    assert loaded[0].signal == 'chirp'
    assert np.allclose(loaded[0].reference, pairs[0].reference)


def test_csv_keeps_columns(tmp_path):
    path = write_csv(tmp_path / 'curve.csv', [{'iteration': 0, 'mse': 0.5}], columns=['iteration', 'mse'])
    frame = read_csv(path)
    assert list(frame.columns) == ['iteration', 'mse']
    assert frame['mse'].iloc[0] == pytest.approx(0.5)


def test_pgm_round_trip(tmp_path):
    image = np.linspace(0.0, 1.0, 64 * 48).reshape(64, 48)
    path = write_pgm(tmp_path / 'tactile.pgm', image)
    assert path.read_bytes().startswith(b'P5')
    restored = read_pgm(path)
    assert restored.shape == (64, 48)
    assert np.max(np.abs(restored - image)) <= 1.0 / 255.0


def test_hand_toml_round_trip(tmp_path, hand):
    model = params_to_hand(hand, hand_to_params(hand) * 1.1)
    path = write_hand_toml(tmp_path / 'hand_model.toml', model)
    assert np.allclose(hand_to_params(read_hand_toml(path)), hand_to_params(model))
    config = RunConfig.from_toml(path)
    assert np.allclose(config.hand.stiffness, model.stiffness)
    with pytest.raises(ConfigError):
        read_hand_toml(tmp_path / 'absent.toml')


def test_run_directories_are_not_reused(tmp_path):
    config = RunConfig(out=tmp_path, name='exp', seed=3)
    first = prepare_run_dir(config, 'eval')
    assert first.name == 'exp-eval-s3'
    (first / 'summary.csv').write_text('x')
    second = prepare_run_dir(config, 'eval')
    assert second.name == 'exp-eval-s3-1'
    assert prepare_run_dir(config, 'eval') == second
