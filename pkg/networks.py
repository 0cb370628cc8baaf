"""
Dense and temporal-convolution policy networks with hand-written gradients.

Parameters live in a flat dict keyed ``"<layer>.W"`` / ``"<layer>.b"`` plus a
state-independent ``"log_std"``. Layer groups:
    enc*   privileged MLP encoder (teacher)
    chan*, conv*, proj   TCN encoder over an observation history (student)
    pi*    shared trunk, ``mu`` action mean head, ``value`` head

Checkpoint layout, all integers little-endian:
    8 bytes   magic ``ROTCKPT1``
    uint32    format version
    uint32    metadata length n
    n bytes   JSON metadata (net config, parameter names and shapes)
    float64   parameter blobs, little-endian, in metadata order
"""
import logging
import math
import struct
from pathlib import Path

import numpy as np
import orjson

from artifacts import atomic_write_bytes
from constants import (
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION, RUNTIME_ERRORS, VALIDATION_ERRORS, adam_betas, adam_eps,
    history_length, initial_log_std, latent_dim, num_joints, policy_units, tcn_kernels, tcn_strides,
    teacher_encoder_units,
)
from errors import CheckpointError, InputDomainError, TrainingDivergence

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# ============================================================================
# ACTIVATIONS AND LAYERS
# ============================================================================

def _activate(kind, pre):
    if kind == 'relu':
        return np.maximum(pre, 0.0)
    if kind == 'elu':
        return np.where(pre > 0, pre, np.expm1(np.minimum(pre, 0.0)))
    if kind == 'tanh':
        return np.tanh(pre)
    return pre


def _activation_grad(kind, pre, out):
    if kind == 'relu':
        return (pre > 0).astype(np.float64)
    if kind == 'elu':
        return np.where(pre > 0, 1.0, out + 1.0)
    if kind == 'tanh':
        return 1.0 - out ** 2
    return np.ones_like(pre)


def dense_forward(params, name, x, kind):
    pre = x @ params[f'{name}.W'] + params[f'{name}.b']
    out = _activate(kind, pre)
    return out, (name, x, pre, out, kind)


def dense_backward(params, cache, dout, grads):
    name, x, pre, out, kind = cache
    dpre = dout * _activation_grad(kind, pre, out)
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = dpre.reshape(-1, dpre.shape[-1])
    grads[f'{name}.W'] += flat_x.T @ flat_d
    grads[f'{name}.b'] += flat_d.sum(axis=0)
    return dpre @ params[f'{name}.W'].T


def conv_output_length(length, kernel, stride):
    return (length - kernel) // stride + 1


def conv1d_forward(params, name, x, kernel, stride, kind):
    """Valid 1-D convolution over time; x is (batch, time, channels)."""
    batch, length, channels = x.shape
    out_len = conv_output_length(length, kernel, stride)
    index = stride * np.arange(out_len)[:, None] + np.arange(kernel)[None, :]
    patches = x[:, index, :].reshape(batch, out_len, kernel * channels)
    out, (_, _, pre, out_, _) = dense_forward(params, name, patches, kind)
    return out, (name, x, patches, pre, out_, kind, kernel, stride, index)


def conv1d_backward(params, cache, dout, grads):
    name, x, patches, pre, out, kind, kernel, stride, index = cache
    dpatches = dense_backward(params, (name, patches, pre, out, kind), dout, grads)
    batch, out_len, _ = dpatches.shape
    dpatches = dpatches.reshape(batch, out_len, kernel, x.shape[-1])
    dx = np.zeros_like(x)
    for j in range(kernel):
        dx[:, index[:, j], :] += dpatches[:, :, j, :]
    return dx


# ============================================================================
# POLICY NETWORK
# ============================================================================

class PolicyNet:
    """Gaussian actor-critic with an optional privileged MLP or TCN encoder.

    Teacher input is ``[obs | privileged]`` (batch, obs_dim + priv_dim);
    student input is an observation history (batch, history, obs_dim).
    """

    def __init__(self, obs_dim, action_dim=num_joints, encoder='mlp', priv_dim=0,
                 encoder_units=teacher_encoder_units, policy_units=policy_units, history=history_length,
                 latent=latent_dim, kernels=tcn_kernels, strides=tcn_strides, log_std=initial_log_std, seed=0):
        if encoder == 'mlp' and priv_dim == 0:
            encoder = None
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.encoder = encoder
        self.priv_dim = int(priv_dim) if encoder == 'mlp' else 0
        self.encoder_units = tuple(int(u) for u in encoder_units)
        self.policy_units = tuple(int(u) for u in policy_units)
        self.history = int(history)
        self.kernels = tuple(int(k) for k in kernels)
        self.strides = tuple(int(s) for s in strides)
        if encoder == 'mlp':
            self.latent = self.encoder_units[-1]
        elif encoder == 'tcn':
            self.latent = int(latent)
        else:
            self.latent = 0
        self.layers = self._layout()
        self.params = self._initialize(np.random.default_rng(seed), log_std)

    # ------------------------------------------------------------------
    def _layout(self):
        """Ordered (name, kind, fan_in, fan_out, activation) descriptions."""
        layers = []
        if self.encoder == 'mlp':
            fan_in = self.priv_dim
            for i, units in enumerate(self.encoder_units):
                last = i == len(self.encoder_units) - 1
                layers.append((f'enc{i}', 'dense', fan_in, units, 'tanh' if last else 'relu'))
                fan_in = units
        elif self.encoder == 'tcn':
            width = self.obs_dim
            layers.append(('chan0', 'dense', width, width, 'relu'))
            layers.append(('chan1', 'dense', width, width, 'relu'))
            length = self.history
            for i, (kernel, stride) in enumerate(zip(self.kernels, self.strides)):
                length = conv_output_length(length, kernel, stride)
                if length < 1:
                    raise InputDomainError(f'history {self.history} is too short for the TCN kernels')
                layers.append((f'conv{i}', 'conv', kernel * width, width, 'relu'))
            self.tcn_length = length
            layers.append(('proj', 'dense', length * width, self.latent, 'tanh'))
        fan_in = self.obs_dim + self.latent
        for i, units in enumerate(self.policy_units):
            layers.append((f'pi{i}', 'dense', fan_in, units, 'elu'))
            fan_in = units
        layers.append(('mu', 'dense', fan_in, self.action_dim, 'linear'))
        layers.append(('value', 'dense', fan_in, 1, 'linear'))
        return layers

    def _initialize(self, rng, log_std):
        params = {}
        for name, _, fan_in, fan_out, _ in self.layers:
            scale = 0.01 if name in ('mu', 'value') else math.sqrt(2.0 / fan_in)
            params[f'{name}.W'] = rng.normal(0.0, scale, size=(fan_in, fan_out))
            params[f'{name}.b'] = np.zeros(fan_out)
        params['log_std'] = np.full(self.action_dim, float(log_std))
        return params

    @property
    def activations(self):
        return {name: act for name, _, _, _, act in self.layers}

    def config(self):
        return {
            'obs_dim': self.obs_dim, 'action_dim': self.action_dim, 'encoder': self.encoder,
            'priv_dim': self.priv_dim, 'encoder_units': list(self.encoder_units),
            'policy_units': list(self.policy_units), 'history': self.history, 'latent': self.latent or latent_dim,
            'kernels': list(self.kernels), 'strides': list(self.strides),
        }

    def copy(self):
        clone = PolicyNet(**self.config())
        clone.params = {key: value.copy() for key, value in self.params.items()}
        return clone

    def zero_grads(self):
        return {key: np.zeros_like(value) for key, value in self.params.items()}

    def trunk_keys(self):
        names = {name for name, *_ in self.layers if name.startswith('pi') or name in ('mu', 'value')}
        return [key for key in self.params if key.split('.')[0] in names or key == 'log_std']


def copy_trunk(source: PolicyNet, target: PolicyNet):
    """Copy trunk, heads and log-std from source into target (shapes must agree)."""
    for key in target.trunk_keys():
        if source.params[key].shape != target.params[key].shape:
            raise CheckpointError(RUNTIME_ERRORS['CHECKPOINT_MISMATCH'].format(
                name=key, got=source.params[key].shape, expected=target.params[key].shape,
            ))
        target.params[key] = source.params[key].copy()
    return target


# ============================================================================
# FORWARD / BACKWARD
# ============================================================================

def _as_batch(net: PolicyNet, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if net.encoder == 'tcn':
        single = x.ndim == 2
        x = x[None] if single else x
        if x.ndim != 3 or x.shape[1:] != (net.history, net.obs_dim):
            raise InputDomainError(VALIDATION_ERRORS['DIM_MISMATCH'].format(
                got=x.shape[1:], expected=(net.history, net.obs_dim),
            ))
        return x, single
    single = x.ndim == 1
    x = x[None] if single else x
    expected = net.obs_dim + net.priv_dim
    if x.ndim != 2 or x.shape[1] != expected:
        raise InputDomainError(VALIDATION_ERRORS['DIM_MISMATCH'].format(got=x.shape[-1], expected=expected))
    return x, single


def _encode(net: PolicyNet, x, caches):
    p = net.params
    acts = net.activations
    if net.encoder == 'mlp':
        obs, h = x[:, :net.obs_dim], x[:, net.obs_dim:]
        for name, *_ in net.layers:
            if name.startswith('enc'):
                h, cache = dense_forward(p, name, h, acts[name])
                caches.append(('dense', cache))
        return obs, h
    if net.encoder == 'tcn':
        h = x
        for name in ('chan0', 'chan1'):
            h, cache = dense_forward(p, name, h, acts[name])
            caches.append(('dense', cache))
        for i, (kernel, stride) in enumerate(zip(net.kernels, net.strides)):
            h, cache = conv1d_forward(p, f'conv{i}', h, kernel, stride, acts[f'conv{i}'])
            caches.append(('conv', cache))
        caches.append(('flatten', h.shape))
        h, cache = dense_forward(p, 'proj', h.reshape(h.shape[0], -1), acts['proj'])
        caches.append(('dense', cache))
        return x[:, -1, :], h
    return x, np.zeros((x.shape[0], 0))


def _forward(net: PolicyNet, x):
    p = net.params
    acts = net.activations
    enc_caches = []
    obs, z = _encode(net, x, enc_caches)
    h = np.concatenate([obs, z], axis=-1)
    trunk_caches = []
    for i in range(len(net.policy_units)):
        h, cache = dense_forward(p, f'pi{i}', h, acts[f'pi{i}'])
        trunk_caches.append(cache)
    mean, mu_cache = dense_forward(p, 'mu', h, 'linear')
    value, value_cache = dense_forward(p, 'value', h, 'linear')
    log_std = np.broadcast_to(p['log_std'], mean.shape)
    return {
        'mean': mean, 'log_std': log_std, 'value': value[:, 0], 'latent': z,
        'caches': (enc_caches, trunk_caches, mu_cache, value_cache),
    }


def net_forward(net: PolicyNet, inputs):
    """Deterministic forward pass; returns (action mean, log std, value)."""
    x, single = _as_batch(net, inputs)
    out = _forward(net, x)
    mean, log_std, value = out['mean'], np.array(out['log_std']), out['value']
    if single:
        return mean[0], log_std[0], float(value[0])
    return mean, log_std, value


def encode(net: PolicyNet, inputs):
    """Latent vector produced by the net's encoder."""
    x, single = _as_batch(net, inputs)
    _, z = _encode(net, x, [])
    return z[0] if single else z


def _backward(net: PolicyNet, caches, dmean, dvalue, dlatent=None):
    p = net.params
    grads = net.zero_grads()
    enc_caches, trunk_caches, mu_cache, value_cache = caches
    dh = dense_backward(p, mu_cache, dmean, grads)
    dh = dh + dense_backward(p, value_cache, dvalue[:, None], grads)
    for cache in reversed(trunk_caches):
        dh = dense_backward(p, cache, dh, grads)
    if not enc_caches:
        return grads
    dz = dh[:, net.obs_dim:]
    if dlatent is not None:
        dz = dz + dlatent
    for kind, cache in reversed(enc_caches):
        if kind == 'dense':
            dz = dense_backward(p, cache, dz, grads)
        elif kind == 'conv':
            dz = conv1d_backward(p, cache, dz, grads)
        else:
            dz = dz.reshape(cache)
    return grads


# ============================================================================
# LOSSES AND GRADIENTS
# ============================================================================

def gaussian_nll(mean, log_std, action):
    """Negative log density of a diagonal Gaussian, summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (np.asarray(action, dtype=np.float64) - mean) * np.exp(-log_std)
    dim = mean.shape[-1]
    value = 0.5 * np.sum(z ** 2, axis=-1) + np.sum(np.broadcast_to(log_std, mean.shape), axis=-1) + 0.5 * dim * LOG_2PI
    return float(value) if np.ndim(value) == 0 else value


def log_prob(mean, log_std, action):
    return -gaussian_nll(mean, log_std, action)


def sample_action(mean, log_std, rng):
    return mean + np.exp(log_std) * rng.standard_normal(np.shape(mean))


def _mean_logstd_grads(mean, log_std, action, weight):
    """d(-log p)/d(mean), d(-log p)/d(log_std) scaled per sample by ``weight``."""
    inv_var = np.exp(-2.0 * log_std)
    diff = action - mean
    dmean = -diff * inv_var * weight[:, None]
    dlog_std = (1.0 - diff ** 2 * inv_var) * weight[:, None]
    return dmean, dlog_std


def _ppo_loss(out, batch):
    mean, log_std, value = out['mean'], out['log_std'], out['value']
    actions = batch['actions']
    adv = batch['advantages']
    n = len(adv)
    clip = batch.get('clip', 0.2)
    new_lp = log_prob(mean, log_std, actions)
    ratio = np.exp(new_lp - batch['old_log_prob'])
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surrogate = np.minimum(ratio * adv, clipped * adv)
    value_err = value - batch['returns']
    value_coef = batch.get('value_coef', 0.5)
    entropy_coef = batch.get('entropy_coef', 0.0)
    entropy = np.sum(log_std[0]) + 0.5 * mean.shape[-1] * (1.0 + LOG_2PI)
    loss = -surrogate.mean() + value_coef * np.mean(value_err ** 2) - entropy_coef * entropy

    # d(-surrogate)/d(log p) is -A * ratio where the unclipped branch is the minimum
    active = ratio * adv <= clipped * adv
    dlp = -np.where(active, adv * ratio, 0.0) / n
    dmean, dlog_std = _mean_logstd_grads(mean, log_std, actions, -dlp)
    dvalue = 2.0 * value_coef * value_err / n
    stats = {
        'policy_loss': float(-surrogate.mean()), 'value_loss': float(np.mean(value_err ** 2)),
        'entropy': float(entropy), 'clip_fraction': float(np.mean(np.abs(ratio - 1.0) > clip)),
    }
    return loss, dmean, dlog_std.sum(axis=0) - entropy_coef, dvalue, None, stats


def _nll_loss(out, batch):
    mean, log_std = out['mean'], out['log_std']
    n = mean.shape[0]
    nll = gaussian_nll(mean, log_std, batch['actions'])
    dmean, dlog_std = _mean_logstd_grads(mean, log_std, batch['actions'], np.full(n, 1.0 / n))
    stats = {'nll': float(np.mean(nll))}
    return float(np.mean(nll)), dmean, dlog_std.sum(axis=0), np.zeros(n), None, stats


def _distill_loss(out, batch):
    nll, dmean, dlog_std, dvalue, _, stats = _nll_loss(out, batch)
    diff = out['latent'] - batch['latent']
    mse = float(np.mean(diff ** 2))
    dlatent = 2.0 * diff / diff.size
    stats.update({'mse': mse, 'total': mse + nll})
    return mse + nll, dmean, dlog_std, dvalue, dlatent, stats


LOSSES = {'ppo': _ppo_loss, 'nll': _nll_loss, 'distill': _distill_loss}


def net_gradient(net: PolicyNet, loss, batch):
    """Exact gradients of a named loss; returns (loss value, gradient dict, stats).

    ``ppo`` reads actions, old_log_prob, advantages, returns (and optionally clip,
    value_coef, entropy_coef); ``nll`` reads actions; ``distill`` reads actions
    and the target latent.
    """
    if loss not in LOSSES:
        raise InputDomainError(VALIDATION_ERRORS['UNKNOWN_MODE'].format(kind='loss', mode=loss))
    x, _ = _as_batch(net, batch['inputs'])
    out = _forward(net, x)
    value, dmean, dlog_std, dvalue, dlatent, stats = LOSSES[loss](out, batch)
    grads = _backward(net, out['caches'], dmean, dvalue, dlatent)
    grads['log_std'] += dlog_std
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergence(RUNTIME_ERRORS['NAN_GRADIENT'].format(name=name))
    return float(value), grads, stats


def loss_value(net: PolicyNet, loss, batch):
    x, _ = _as_batch(net, batch['inputs'])
    return float(LOSSES[loss](_forward(net, x), batch)[0])


def global_norm(grads):
    return float(math.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values())))


# ============================================================================
# OPTIMIZER AND NORMALIZATION
# ============================================================================

class Adam:
    def __init__(self, params, lr=1e-3, betas=adam_betas, eps=adam_eps):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {key: np.zeros_like(value) for key, value in params.items()}
        self.v = {key: np.zeros_like(value) for key, value in params.items()}
        self.t = 0

    def step(self, params, grads, max_norm=None, keys=None):
        """Apply one update in place; returns the pre-clip gradient norm."""
        norm = global_norm(grads)
        scale = 1.0
        if max_norm is not None and norm > max_norm:
            scale = max_norm / (norm + 1e-12)
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for key in keys or grads:
            g = grads[key] * scale
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g ** 2
            m_hat = self.m[key] / correction1
            v_hat = self.v[key] / correction2
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return norm


class RunningMeanStd:
    """Streaming per-feature mean and variance (parallel merge)."""

    def __init__(self, shape, clip=5.0):
        self.mean = np.zeros(shape)
        self.var = np.ones(shape)
        self.count = 1e-4
        self.clip = clip

    def update(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, *np.shape(self.mean))
        batch_mean = x.mean(axis=0)
        batch_var = x.var(axis=0)
        n = x.shape[0]
        delta = batch_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + batch_var * n + delta ** 2 * self.count * n / total
        self.var = m2 / total
        self.count = total

    def normalize(self, x):
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -self.clip, self.clip)


# ============================================================================
# CHECKPOINTS
# ============================================================================

def save_checkpoint(path, net: PolicyNet, extra=None, info=None):
    """Write the net plus optional named arrays (``extra``) and JSON-able ``info``."""
    arrays = dict(net.params)
    for key, value in (extra or {}).items():
        arrays[f'extra.{key}'] = np.asarray(value, dtype=np.float64)
    meta = {
        'net': net.config(),
        'params': [[name, list(value.shape)] for name, value in arrays.items()],
        'info': info or {},
    }
    header = orjson.dumps(meta, option=orjson.OPT_SERIALIZE_NUMPY)
    blobs = b''.join(np.ascontiguousarray(value, dtype='<f8').tobytes() for value in arrays.values())
    data = CHECKPOINT_MAGIC + struct.pack('<II', CHECKPOINT_VERSION, len(header)) + header + blobs
    return atomic_write_bytes(path, data)


def load_checkpoint(path):
    """Returns (net, extra arrays, info)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f'Checkpoint not found: {path}')
    data = path.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(RUNTIME_ERRORS['CHECKPOINT_MAGIC'].format(path=path))
    offset = len(CHECKPOINT_MAGIC)
    version, meta_len = struct.unpack_from('<II', data, offset)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f'Unsupported checkpoint version {version} in {path}')
    offset += 8
    meta = orjson.loads(data[offset:offset + meta_len])
    offset += meta_len

    net = PolicyNet(**meta['net'])
    extra = {}
    for name, shape in meta['params']:
        count = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(data, dtype='<f8', count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
        if name.startswith('extra.'):
            extra[name[len('extra.'):]] = value
            continue
        if name not in net.params or net.params[name].shape != value.shape:
            expected = net.params[name].shape if name in net.params else None
            raise CheckpointError(RUNTIME_ERRORS['CHECKPOINT_MISMATCH'].format(
                name=name, got=value.shape, expected=expected,
            ))
        net.params[name] = value
    if offset != len(data):
        raise CheckpointError(f'Checkpoint {path} has {len(data) - offset} trailing bytes')
    return net, extra, meta.get('info', {})
