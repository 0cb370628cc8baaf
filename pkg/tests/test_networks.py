import math

import numpy as np
import pytest

from errors import CheckpointError, InputDomainError, TrainingDivergence
from networks import (
    Adam, PolicyNet, RunningMeanStd, copy_trunk, encode, gaussian_nll, load_checkpoint, log_prob, loss_value,
    net_forward, net_gradient, save_checkpoint,
)


def small_teacher(seed=0):
    return PolicyNet(obs_dim=3, action_dim=2, encoder='mlp', priv_dim=2, encoder_units=(4, 2),
                     policy_units=(5,), seed=seed)


def small_student(seed=0):
    return PolicyNet(obs_dim=3, action_dim=2, encoder='tcn', policy_units=(5,), history=30, latent=2, seed=seed)


def numeric_gradient(net, loss, batch, key, index, eps=1e-6):
    original = net.params[key][index]
    net.params[key][index] = original + eps
    up = loss_value(net, loss, batch)
    net.params[key][index] = original - eps
    down = loss_value(net, loss, batch)
    net.params[key][index] = original
    return (up - down) / (2 * eps)


def check_gradients(net, loss, batch, keys):
    _, grads, _ = net_gradient(net, loss, batch)
    rng = np.random.default_rng(0)
    for key in keys:
        shape = net.params[key].shape
        for _ in range(3):
            index = tuple(int(rng.integers(n)) for n in shape)
            expected = numeric_gradient(net, loss, batch, key, index)
            assert grads[key][index] == pytest.approx(expected, rel=1e-4, abs=1e-7), key


def test_gaussian_nll_standard_normal():
    value = gaussian_nll(np.zeros(16), np.zeros(16), np.zeros(16))
    assert value == pytest.approx(8.0 * math.log(2.0 * math.pi))
    assert log_prob(np.zeros(16), np.zeros(16), np.zeros(16)) == pytest.approx(-value)


def test_forward_shapes():
    net = PolicyNet(obs_dim=95, encoder='mlp', priv_dim=26, encoder_units=(16, 8), policy_units=(32,))
    mean, log_std, value = net_forward(net, np.zeros(121))
    assert mean.shape == (16,) and log_std.shape == (16,)
    assert isinstance(value, float)
    mean, _, value = net_forward(net, np.zeros((5, 121)))
    assert mean.shape == (5, 16) and value.shape == (5,)
    assert encode(net, np.zeros(121)).shape == (8,)


def test_input_dimension_is_checked():
    with pytest.raises(InputDomainError):
        net_forward(small_teacher(), np.zeros(4))
    with pytest.raises(InputDomainError):
        net_forward(small_student(), np.zeros((10, 3)))


def test_nll_gradients_match_finite_differences(rng):
    net = small_teacher()
    batch = {'inputs': rng.normal(size=(6, 5)), 'actions': rng.normal(size=(6, 2))}
    check_gradients(net, 'nll', batch, ['enc0.W', 'enc1.W', 'pi0.W', 'mu.b', 'log_std'])


def test_ppo_gradients_match_finite_differences(rng):
    net = small_teacher(seed=1)
    inputs = rng.normal(size=(8, 5))
    mean, log_std, _ = net_forward(net, inputs)
    actions = mean + 0.3 * rng.normal(size=mean.shape)
    batch = {
        'inputs': inputs, 'actions': actions, 'old_log_prob': log_prob(mean, log_std, actions) - 0.05,
        'advantages': rng.normal(size=8), 'returns': rng.normal(size=8), 'clip': 0.2, 'value_coef': 0.5,
    }
    check_gradients(net, 'ppo', batch, ['enc0.W', 'pi0.W', 'pi0.b', 'mu.W', 'value.W', 'log_std'])


def test_distill_gradients_through_tcn(rng):
    net = small_student()
    batch = {
        'inputs': rng.normal(size=(4, 30, 3)), 'actions': rng.normal(size=(4, 2)),
        'latent': rng.uniform(-0.5, 0.5, size=(4, 2)),
    }
    check_gradients(net, 'distill', batch, ['chan0.W', 'conv0.W', 'conv2.b', 'proj.W', 'pi0.W'])


def test_nan_gradient_is_reported():
    net = small_teacher()
    batch = {'inputs': np.full((2, 5), np.nan), 'actions': np.zeros((2, 2))}
    with pytest.raises(TrainingDivergence, match="Non-finite"):
        net_gradient(net, 'nll', batch)


def test_adam_minimizes_quadratic():
    params = {'x': np.array([3.0, -2.0])}
    optimizer = Adam(params, lr=0.1)
    for _ in range(300):
        optimizer.step(params, {'x': 2.0 * params['x']})
    assert np.sum(params['x'] ** 2) < 0.1


def test_running_mean_std_tracks_batches(rng):
    data = rng.normal(3.0, 2.0, size=(1000, 4))
    stats = RunningMeanStd(4)
    for chunk in np.split(data, 10):
        stats.update(chunk)
    assert np.allclose(stats.mean, data.mean(axis=0), atol=1e-3)
    assert np.allclose(stats.var, data.var(axis=0), rtol=1e-3)
    assert np.all(np.abs(stats.normalize(data * 100)) <= 5.0)


def test_copy_trunk_shares_policy_layers():
    teacher = small_teacher(seed=3)
    student = copy_trunk(teacher, small_student(seed=4))
    for key in student.trunk_keys():
        assert np.array_equal(student.params[key], teacher.params[key])


def test_checkpoint_round_trip(tmp_path):
    net = small_student(seed=2)
    path = save_checkpoint(tmp_path / 'net.ckpt', net, extra={'obs_mean': np.arange(3.0)}, info={'tag': 'x'})
    loaded, extra, info = load_checkpoint(path)
    assert loaded.config() == net.config()
    for key, value in net.params.items():
        assert np.array_equal(loaded.params[key], value)
    assert np.array_equal(extra['obs_mean'], np.arange(3.0))
    assert info == {'tag': 'x'}


def test_corrupt_checkpoints_are_rejected(tmp_path):
    path = save_checkpoint(tmp_path / 'net.ckpt', small_teacher())
    padded = tmp_path / 'padded.ckpt'
    padded.write_bytes(path.read_bytes() + b'\x00' * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(padded)
    foreign = tmp_path / 'foreign.ckpt'
    foreign.write_bytes(b'not a checkpoint')
    with pytest.raises(CheckpointError):
        load_checkpoint(foreign)
