#!/usr/bin/python
# -*- coding: utf-8 -*-

import copy
import json
import logging
import struct

from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'SGNN1'
BCE_EPSILON = 1e-7
ENCODER_WIDTHS = (16, 32, 64, 64)


class ShapeError(ValueError):
    """ Input tensor does not match the declared layer topology """
    def __init__(self, layer, expected, actual):
        self.layer = layer
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f'Layer {layer}: expected shape {self.expected}, '
                         f'got {self.actual}')


class NonFiniteError(FloatingPointError):
    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f'Non-finite values found in: {name}')


class FormatError(ValueError):
    """ Malformed or truncated binary file """
    pass


def he_uniform(shape, fan_in, rng=None, gain=1.0, dtype=np.float32):
    """ He-uniform initialization, zeros when no generator is given. """
    if rng is None:
        return np.zeros(shape, dtype=dtype)
    limit = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def check_shape(name, x, expected):
    """ Compare `x.shape` against `expected`, where None matches any size. """
    if x.ndim != len(expected) or any(
            e is not None and e != a for e, a in zip(expected, x.shape)):
        raise ShapeError(name, expected, x.shape)


###############################################################################
# Layers
# Each layer owns its parameter tensors and implements a forward pass that
# returns (output, cache) and a backward pass that returns (input_grad, grads).
# Images are NHWC.
###############################################################################

class Layer(ABC):

    kind = None

    def __init__(self, name):
        self.name = name
        self.params = {}

    def hyperparams(self) -> dict:
        return {}

    @abstractmethod
    def forward(self, x, train=False, rng=None):
        pass

    @abstractmethod
    def backward(self, dy, cache):
        pass


class Dense(Layer):

    kind = 'dense'

    def __init__(self, name, n_in, n_out, rng=None, gain=1.0, dtype=np.float32):
        super().__init__(name)
        self.n_in = n_in
        self.n_out = n_out
        self.params['weight'] = he_uniform((n_in, n_out), n_in, rng, gain, dtype)
        self.params['bias'] = np.zeros(n_out, dtype=dtype)

    def hyperparams(self):
        return {'n_in': self.n_in, 'n_out': self.n_out}

    def forward(self, x, train=False, rng=None):
        check_shape(self.name, x, (None, self.n_in))
        return x @ self.params['weight'] + self.params['bias'], x

    def backward(self, dy, x):
        grads = {
            'weight': x.T @ dy,
            'bias': dy.sum(axis=0),
        }
        return dy @ self.params['weight'].T, grads


class Conv2D(Layer):
    """ 2D convolution over NHWC tensors with 'same' or 'valid' padding. """

    kind = 'conv2d'

    def __init__(self, name, in_channels, out_channels, kernel_size=3, stride=1,
                 padding='same', rng=None, dtype=np.float32):
        super().__init__(name)
        if padding not in ('same', 'valid'):
            raise ValueError(f'Unknown padding mode: {padding}')
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        k = kernel_size
        self.params['weight'] = he_uniform(
            (k, k, in_channels, out_channels), k * k * in_channels, rng, dtype=dtype)
        self.params['bias'] = np.zeros(out_channels, dtype=dtype)

    def hyperparams(self):
        return {
            'in_channels': self.in_channels,
            'out_channels': self.out_channels,
            'kernel_size': self.kernel_size,
            'stride': self.stride,
            'padding': self.padding,
        }

    @property
    def pad(self):
        return self.kernel_size // 2 if self.padding == 'same' else 0

    def forward(self, x, train=False, rng=None):
        check_shape(self.name, x, (None, None, None, self.in_channels))
        k, s, p = self.kernel_size, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        if xp.shape[1] < k or xp.shape[2] < k:
            raise ShapeError(self.name, (None, k, k, self.in_channels), x.shape)

        # (N, Ho, Wo, C, k, k) strided view, no copy
        windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        y = np.tensordot(windows, self.params['weight'], axes=([3, 4, 5], [2, 0, 1]))
        y += self.params['bias']
        return y, (x.shape, xp.shape, windows)

    def backward(self, dy, cache):
        x_shape, xp_shape, windows = cache
        k, s, p = self.kernel_size, self.stride, self.pad
        weight = self.params['weight']

        grads = {
            'weight': np.tensordot(windows, dy, axes=([0, 1, 2], [0, 1, 2]))
                        .transpose(1, 2, 0, 3),
            'bias': dy.sum(axis=(0, 1, 2)),
        }

        ho, wo = dy.shape[1], dy.shape[2]
        dwin = np.tensordot(dy, weight, axes=([3], [3]))  # (N, Ho, Wo, k, k, C)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dwin[:, :, :, i, j, :]

        if p:
            dxp = dxp[:, p:p + x_shape[1], p:p + x_shape[2], :]
        return dxp, grads


class ReLU(Layer):

    kind = 'relu'

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, mask):
        return dy * mask, {}


class Sigmoid(Layer):

    kind = 'sigmoid'

    def forward(self, x, train=False, rng=None):
        y = expit(x)
        return y, y

    def backward(self, dy, y):
        return dy * y * (1 - y), {}


class GlobalAvgPool(Layer):

    kind = 'global_avg_pool'

    def forward(self, x, train=False, rng=None):
        check_shape(self.name, x, (None, None, None, None))
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, dy, shape):
        area = shape[1] * shape[2]
        dx = np.ones(shape, dtype=dy.dtype) * (dy / area)[:, None, None, :]
        return dx, {}


class Flatten(Layer):

    kind = 'flatten'

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, shape):
        return dy.reshape(shape), {}


class Dropout(Layer):
    """
    Inverted dropout: activations are scaled by 1/keep at train time, so the
    layer is exactly the identity in eval mode.
    """

    kind = 'dropout'

    def __init__(self, name, rate=0.0):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f'Dropout rate must be in [0, 1): {rate}')
        self.rate = rate

    def hyperparams(self):
        return {'rate': self.rate}

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError(f'Layer {self.name}: train mode dropout needs an rng.')

        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        return x * mask, mask

    def backward(self, dy, mask):
        if mask is None:
            return dy, {}
        return dy * mask, {}


class FiLM(Layer):
    """
    Feature-wise linear modulation.

    A dense generator maps the conditioning vector to per-channel (gamma, beta)
    and features become x * (1 + gamma) + beta. Generator weights start at zero
    so a fresh layer is the identity.
    """

    kind = 'film'

    def __init__(self, name, channels, cond_dim, rng=None, dtype=np.float32):
        super().__init__(name)
        self.channels = channels
        self.cond_dim = cond_dim
        self.params['weight'] = np.zeros((cond_dim, 2 * channels), dtype=dtype)
        self.params['bias'] = np.zeros(2 * channels, dtype=dtype)

    def hyperparams(self):
        return {'channels': self.channels, 'cond_dim': self.cond_dim}

    def forward(self, x, train=False, rng=None, cond=None):
        check_shape(self.name, x, (None, None, None, self.channels))
        if cond is None:
            raise ValueError(f'Layer {self.name}: missing conditioning input.')
        check_shape(self.name, cond, (x.shape[0], self.cond_dim))

        c = self.channels
        gb = cond @ self.params['weight'] + self.params['bias']
        gamma, beta = gb[:, :c], gb[:, c:]
        y = x * (1 + gamma)[:, None, None, :] + beta[:, None, None, :]
        return y, (x, cond, gamma)

    def backward(self, dy, cache):
        x, cond, gamma = cache
        dgamma = (dy * x).sum(axis=(1, 2))
        dbeta = dy.sum(axis=(1, 2))
        dgb = np.concatenate([dgamma, dbeta], axis=1)

        grads = {
            'weight': cond.T @ dgb,
            'bias': dgb.sum(axis=0),
        }
        dx = dy * (1 + gamma)[:, None, None, :]
        dcond = dgb @ self.params['weight'].T
        return (dx, dcond), grads


class Embedding(Layer):

    kind = 'embedding'

    def __init__(self, name, vocab_size, dim, rng=None, dtype=np.float32):
        super().__init__(name)
        self.vocab_size = vocab_size
        self.dim = dim
        if rng is None:
            table = np.zeros((vocab_size, dim), dtype=dtype)
        else:
            table = rng.normal(0.0, 1.0, size=(vocab_size, dim)).astype(dtype)
        self.params['table'] = table

    def hyperparams(self):
        return {'vocab_size': self.vocab_size, 'dim': self.dim}

    def forward(self, tokens, train=False, rng=None):
        tokens = np.asarray(tokens, dtype=np.int64)
        check_shape(self.name, tokens, (None,))
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ValueError(f'Layer {self.name}: token outside vocabulary '
                             f'of size {self.vocab_size}.')
        return self.params['table'][tokens], tokens

    def backward(self, dy, tokens):
        dtable = np.zeros_like(self.params['table'])
        np.add.at(dtable, tokens, dy)
        return None, {'table': dtable}


LAYER_KINDS = {cls.kind: cls for cls in (
    Dense, Conv2D, ReLU, Sigmoid, GlobalAvgPool, Flatten, Dropout, FiLM, Embedding)}


###############################################################################
# Parameter containers and networks
###############################################################################

class NetParams:
    """ Ordered collection of named layers; parameters keyed 'layer.param'. """

    def __init__(self, layers=()):
        self.layers = {}
        for layer in layers:
            self.add(layer)

    def add(self, layer):
        if layer.name in self.layers:
            raise ValueError(f'Duplicate layer name: {layer.name}')
        self.layers[layer.name] = layer
        return layer

    def __getitem__(self, name):
        return self.layers[name]

    def __contains__(self, name):
        return name in self.layers

    def __iter__(self):
        return iter(self.layers.values())

    def __len__(self):
        return len(self.layers)

    def named_parameters(self):
        for layer in self.layers.values():
            for pname, value in layer.params.items():
                yield f'{layer.name}.{pname}', value

    def get_parameter(self, key):
        layer_name, pname = key.rsplit('.', 1)
        return self.layers[layer_name].params[pname]

    def set_parameter(self, key, value):
        layer_name, pname = key.rsplit('.', 1)
        current = self.layers[layer_name].params[pname]
        if current.shape != value.shape:
            raise ShapeError(key, current.shape, value.shape)
        self.layers[layer_name].params[pname] = value

    def num_parameters(self) -> int:
        return sum(value.size for _, value in self.named_parameters())

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        """ Deep copy with every parameter cast to `dtype`. """
        other = self.copy()
        for layer in other:
            for pname, value in layer.params.items():
                layer.params[pname] = value.astype(dtype)
        return other

    def equals(self, other) -> bool:
        """ Bitwise equality of topology and parameters. """
        mine = list(self.named_parameters())
        theirs = list(other.named_parameters())
        if [k for k, _ in mine] != [k for k, _ in theirs]:
            return False
        return all(a.dtype == b.dtype and a.shape == b.shape and
                   a.tobytes() == b.tobytes()
                   for (_, a), (_, b) in zip(mine, theirs))


def forward_stack(layers, x, train=False, rng=None):
    caches = []
    for layer in layers:
        x, cache = layer.forward(x, train=train, rng=rng)
        caches.append(cache)
    return x, caches


def backward_stack(layers, dy, caches, grads):
    """ Backpropagate through `layers`, collecting parameter grads into `grads`. """
    for layer, cache in zip(reversed(layers), reversed(caches)):
        dy, layer_grads = layer.backward(dy, cache)
        for pname, grad in layer_grads.items():
            grads[f'{layer.name}.{pname}'] = grad
    return dy


class Network(ABC):
    """
    A network topology bound to its NetParams.

    forward() returns (output, cache); the cache is only kept in train mode
    and backward() refuses to run without it.
    """

    def __init__(self, params: NetParams):
        self.params = params

    @abstractmethod
    def forward(self, inputs, train=False, rng=None):
        pass

    @abstractmethod
    def _backward(self, grad, cache) -> dict:
        pass

    def backward(self, grad, cache) -> dict:
        if cache is None:
            raise RuntimeError(f'{type(self).__name__}.backward() needs the cache '
                               'from a train-mode forward pass.')
        grads = self._backward(grad, cache)
        for key, value in self.params.named_parameters():
            if key not in grads:
                grads[key] = np.zeros_like(value)
        return grads


class Sequential(Network):

    def __init__(self, layers):
        params = layers if isinstance(layers, NetParams) else NetParams(layers)
        super().__init__(params)

    def forward(self, inputs, train=False, rng=None):
        x = inputs[0] if isinstance(inputs, (list, tuple)) else inputs
        y, caches = forward_stack(list(self.params), x, train, rng)
        return y, (caches if train else None)

    def _backward(self, grad, caches):
        grads = {}
        backward_stack(list(self.params), grad, caches, grads)
        return grads


class ConvEncoder:
    """
    Stride-2 3x3 conv blocks (conv -> optional FiLM -> ReLU) followed by
    global average pooling or spatial flattening.
    """

    def __init__(self, params: NetParams, prefix, n_blocks, conditioned=False,
                 pooling='avg'):
        self.prefix = prefix
        self.conditioned = conditioned
        self.convs = [params[f'{prefix}.conv{i}'] for i in range(n_blocks)]
        self.films = [params[f'{prefix}.film{i}'] for i in range(n_blocks)] \
            if conditioned else []
        self.relus = [params[f'{prefix}.relu{i}'] for i in range(n_blocks)]
        self.pool = params[f'{prefix}.pool']
        if pooling == 'avg' and not isinstance(self.pool, GlobalAvgPool):
            raise ValueError(f'Encoder {prefix}: expected average pooling.')

    @staticmethod
    def build(params: NetParams, prefix, in_channels, widths=ENCODER_WIDTHS,
              cond_dim=None, pooling='avg', rng=None):
        channels = in_channels
        for i, width in enumerate(widths):
            params.add(Conv2D(f'{prefix}.conv{i}', channels, width, 3, 2, 'same', rng=rng))
            if cond_dim:
                params.add(FiLM(f'{prefix}.film{i}', width, cond_dim))
            params.add(ReLU(f'{prefix}.relu{i}'))
            channels = width

        if pooling == 'avg':
            params.add(GlobalAvgPool(f'{prefix}.pool'))
        elif pooling == 'flatten':
            params.add(Flatten(f'{prefix}.pool'))
        else:
            raise ValueError(f'Unknown pooling: {pooling}')

        return ConvEncoder(params, prefix, len(widths), bool(cond_dim), pooling)

    def forward(self, x, cond=None, train=False, rng=None):
        caches = []
        for i, conv in enumerate(self.convs):
            x, conv_cache = conv.forward(x)
            film_cache = None
            if self.conditioned:
                x, film_cache = self.films[i].forward(x, cond=cond)
            x, relu_cache = self.relus[i].forward(x)
            caches.append((conv_cache, film_cache, relu_cache))
        x, pool_cache = self.pool.forward(x)
        return x, (caches, pool_cache)

    def backward(self, dy, cache, grads):
        """ Returns (input_grad, cond_grad); parameter grads go into `grads`. """
        caches, pool_cache = cache
        dx, _ = self.pool.backward(dy, pool_cache)
        dcond = None
        for i in reversed(range(len(self.convs))):
            conv_cache, film_cache, relu_cache = caches[i]
            dx, _ = self.relus[i].backward(dx, relu_cache)
            if self.conditioned:
                (dx, dc), film_grads = self.films[i].backward(dx, film_cache)
                dcond = dc if dcond is None else dcond + dc
                for pname, grad in film_grads.items():
                    grads[f'{self.films[i].name}.{pname}'] = grad
            dx, conv_grads = self.convs[i].backward(dx, conv_cache)
            for pname, grad in conv_grads.items():
                grads[f'{self.convs[i].name}.{pname}'] = grad
        return dx, dcond


###############################################################################
# Optimizer
###############################################################################

class OptimizerState:
    """ Adam moments, step counter and hyperparameters. """

    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params: NetParams, grads: dict, opt: OptimizerState):
    """
    Apply one Adam update in place.

    Args:
        params (NetParams): parameters to update
        grads (dict): gradient per parameter key
        opt (OptimizerState): optimizer moments and counter

    Returns:
        tuple: (params, opt)
    """
    for key, grad in grads.items():
        value = params.get_parameter(key)
        if grad.shape != value.shape:
            raise ShapeError(key, value.shape, grad.shape)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(key, f'Non-finite gradient for parameter: {key}')

    opt.step += 1
    if not any(np.any(grad) for grad in grads.values()):
        return params, opt

    t = opt.step
    bias1 = 1.0 - opt.beta1 ** t
    bias2 = 1.0 - opt.beta2 ** t
    for key, grad in grads.items():
        value = params.get_parameter(key)
        m = opt.m.get(key)
        v = opt.v.get(key)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)

        m = opt.beta1 * m + (1.0 - opt.beta1) * grad
        v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad
        opt.m[key] = m
        opt.v[key] = v
        value -= opt.lr * (m / bias1) / (np.sqrt(v / bias2) + opt.eps)

    return params, opt


###############################################################################
# Losses
###############################################################################

def bce_loss(prediction, label):
    """
    Binary cross entropy on probabilities, clamped to [eps, 1 - eps].

    Returns:
        tuple: per-element loss and its gradient w.r.t. the prediction
    """
    p = np.asarray(prediction, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError('BCE labels must be 0 or 1.')

    p = np.clip(p, BCE_EPSILON, 1.0 - BCE_EPSILON)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = -y / p + (1.0 - y) / (1.0 - p)
    return loss, grad


def mse_loss(prediction, target):
    """ Mean squared error over all elements and its gradient. """
    diff = prediction - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def softmax_cross_entropy(logits, labels):
    """ Mean cross entropy of integer labels under softmax(logits). """
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = softmax(logits, axis=1)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


###############################################################################
# SGNN1 checkpoint format (little endian)
#   magic "SGNN1" | u32 layer count
#   per layer:  u16 len + name | u16 len + kind | u32 len + hyperparams JSON
#               u32 tensor count
#   per tensor: u16 len + name | u32 ndim | ndim x u32 dims | float32 payload
###############################################################################

def _pack_str(buf, text, fmt='<H'):
    data = text.encode('utf-8')
    buf += struct.pack(fmt, len(data))
    buf += data


class _Reader:

    def __init__(self, data, source):
        self.data = data
        self.source = source
        self.offset = 0

    def read(self, size):
        end = self.offset + size
        if end > len(self.data):
            raise FormatError(f'Truncated file: {self.source}')
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def read_str(self, fmt='<H'):
        (size,) = self.unpack(fmt)
        return self.read(size).decode('utf-8')


def save_params(path, params: NetParams):
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack('<I', len(params))
    for layer in params:
        _pack_str(buf, layer.name)
        _pack_str(buf, layer.kind)
        _pack_str(buf, json.dumps(layer.hyperparams(), sort_keys=True), '<I')
        buf += struct.pack('<I', len(layer.params))
        for pname, value in layer.params.items():
            _pack_str(buf, pname)
            buf += struct.pack('<I', value.ndim)
            buf += struct.pack(f'<{value.ndim}I', *value.shape)
            buf += np.ascontiguousarray(value, dtype='<f4').tobytes()

    Path(path).write_bytes(bytes(buf))
    log.debug('Saved %d layers to: %s', len(params), path)


def load_params(path) -> NetParams:
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError(f'Not an SGNN1 checkpoint: {path}')

    params = NetParams()
    (layer_count,) = reader.unpack('<I')
    for _ in range(layer_count):
        name = reader.read_str()
        kind = reader.read_str()
        hyper = json.loads(reader.read_str('<I'))
        if kind not in LAYER_KINDS:
            raise FormatError(f'Unknown layer kind "{kind}" in: {path}')
        layer = LAYER_KINDS[kind](name, **hyper)

        (tensor_count,) = reader.unpack('<I')
        for _ in range(tensor_count):
            pname = reader.read_str()
            (ndim,) = reader.unpack('<I')
            shape = reader.unpack(f'<{ndim}I')
            size = int(np.prod(shape)) if ndim else 1
            payload = reader.read(4 * size)
            if pname not in layer.params or layer.params[pname].shape != shape:
                raise FormatError(f'Unexpected tensor {name}.{pname} {shape} in: {path}')
            layer.params[pname] = np.frombuffer(payload, dtype='<f4') \
                .reshape(shape).astype(np.float32)
        params.add(layer)

    if reader.offset != len(reader.data):
        raise FormatError(f'Trailing bytes in checkpoint: {path}')
    return params
