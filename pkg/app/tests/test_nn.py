#!/usr/bin/python
# -*- coding: utf-8 -*-

import numpy as np
import pytest

from subgoaltools.classifier import SubgoalClassifier
from subgoaltools.nn import (
    BCE_EPSILON, Conv2D, Dense, Dropout, Embedding, FiLM, Flatten, FormatError,
    GlobalAvgPool, NetParams, NonFiniteError, OptimizerState, ReLU, Sequential, ShapeError,
    Sigmoid, adam_step, bce_loss, load_params, mse_loss, save_params, softmax_cross_entropy)

SEEDS = range(50)
F64 = np.float64


def numeric_grad(loss, x, eps=1e-6):
    grad = np.zeros_like(x, dtype=F64)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + eps
        plus = loss()
        x[index] = original - eps
        minus = loss()
        x[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


def rel_error(analytic, numeric):
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return np.linalg.norm(analytic - numeric) / max(scale, 1e-12)


def _forward(layer, x):
    if isinstance(layer, Dropout):
        # Same mask on every call
        return layer.forward(x, train=True, rng=np.random.default_rng(99))
    return layer.forward(x, train=True)


def gradient_errors(layer, x, rng):
    y, cache = _forward(layer, x)
    weights = rng.normal(size=y.shape)
    dx, grads = layer.backward(weights, cache)

    def loss():
        out, _ = _forward(layer, x)
        return float(np.sum(out * weights))

    errors = {}
    if dx is not None:
        errors['input'] = rel_error(dx, numeric_grad(loss, x))
    for pname, value in layer.params.items():
        errors[pname] = rel_error(grads[pname], numeric_grad(loss, value))
    return errors


LAYER_CASES = {
    'dense': (lambda rng: Dense('d', 5, 8, rng=rng, dtype=F64), (3, 5)),
    'conv_same': (lambda rng: Conv2D('c', 2, 3, 3, 1, 'same', rng=rng, dtype=F64),
                  (2, 5, 5, 2)),
    'conv_stride2': (lambda rng: Conv2D('c', 2, 3, 3, 2, 'same', rng=rng, dtype=F64),
                     (2, 6, 6, 2)),
    'conv_valid': (lambda rng: Conv2D('c', 1, 2, 3, 1, 'valid', rng=rng, dtype=F64),
                   (1, 5, 4, 1)),
    'relu': (lambda rng: ReLU('r'), (4, 8)),
    'sigmoid': (lambda rng: Sigmoid('s'), (4, 8)),
    'global_avg_pool': (lambda rng: GlobalAvgPool('p'), (2, 3, 4, 5)),
    'flatten': (lambda rng: Flatten('f'), (2, 3, 2, 2)),
    'dropout': (lambda rng: Dropout('o', 0.3), (4, 8)),
}


@pytest.mark.parametrize('case', sorted(LAYER_CASES))
def test_layer_gradients_match_finite_differences(case):
    build, shape = LAYER_CASES[case]
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        layer = build(rng)
        x = rng.normal(size=shape)
        errors = gradient_errors(layer, x, rng)
        assert max(errors.values()) < 1e-4, (seed, errors)


def test_film_gradients_match_finite_differences():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        layer = FiLM('film', 3, 4, dtype=F64)
        layer.params['weight'] = rng.normal(size=(4, 6))
        layer.params['bias'] = rng.normal(size=6)
        x = rng.normal(size=(2, 3, 3, 3))
        cond = rng.normal(size=(2, 4))

        y, cache = layer.forward(x, train=True, cond=cond)
        weights = rng.normal(size=y.shape)
        (dx, dcond), grads = layer.backward(weights, cache)

        def loss():
            out, _ = layer.forward(x, train=True, cond=cond)
            return float(np.sum(out * weights))

        assert rel_error(dx, numeric_grad(loss, x)) < 1e-4
        assert rel_error(dcond, numeric_grad(loss, cond)) < 1e-4
        for pname in ('weight', 'bias'):
            assert rel_error(grads[pname], numeric_grad(loss, layer.params[pname])) < 1e-4


def test_embedding_gradients_match_finite_differences():
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        layer = Embedding('e', 6, 4, rng=rng, dtype=F64)
        tokens = rng.integers(0, 6, size=9)
        errors = gradient_errors(layer, tokens, rng)
        assert list(errors) == ['table']
        assert errors['table'] < 1e-4


def test_classifier_gradients_match_finite_differences(tiny_classifier_arch):
    rng = np.random.default_rng(0)
    params = SubgoalClassifier.build(tiny_classifier_arch, seed=3).params.astype(F64)
    model = SubgoalClassifier(tiny_classifier_arch, params)
    # FiLM generators start at zero; give them a signal to check
    for layer in model.params:
        if isinstance(layer, FiLM):
            layer.params['weight'] = rng.normal(0, 0.1, size=layer.params['weight'].shape)

    batch = (rng.random((4, 32, 32, 3)), rng.random((4, 32, 32, 3)),
             np.array([0, 3, 5, 3]), np.array([1.0, 0.0, 1.0, 0.0]))
    _, grads = model.loss_and_grads(batch, rng)

    def loss():
        return model.loss_and_grads(batch, rng)[0]

    for key in ('head.out.weight', 'head.dense0.bias', 'state.conv1.weight',
                'goal.film0.weight', 'instruction.table'):
        value = model.params.get_parameter(key)
        flat = value.reshape(-1)
        picks = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        analytic = grads[key].reshape(-1)[picks]
        numeric = []
        for i in picks:
            original = flat[i]
            flat[i] = original + 1e-5
            plus = loss()
            flat[i] = original - 1e-5
            minus = loss()
            flat[i] = original
            numeric.append((plus - minus) / 2e-5)
        if np.any(analytic) or np.any(numeric):
            assert rel_error(analytic, np.array(numeric)) < 1e-3, key


def test_dense_identity_forward():
    layer = Dense('d', 3, 3)
    layer.params['weight'] = np.eye(3, dtype=np.float32)
    y, _ = layer.forward(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    np.testing.assert_array_equal(y, [[1.0, 2.0, 3.0]])


def test_dense_weight_gradient_closed_form():
    layer = Dense('d', 3, 2, rng=np.random.default_rng(0), dtype=F64)
    x = np.array([[1.0, -2.0, 0.5]])
    y, cache = layer.forward(x, train=True)
    _, grads = layer.backward(np.ones_like(y), cache)
    np.testing.assert_allclose(grads['weight'], np.outer(x[0], np.ones(2)))


def test_conv_valid_all_ones():
    layer = Conv2D('c', 1, 1, 3, 1, 'valid')
    layer.params['weight'][...] = 1.0
    y, _ = layer.forward(np.ones((1, 5, 5, 1), dtype=np.float32))
    assert y.shape == (1, 3, 3, 1)
    np.testing.assert_array_equal(y, 9.0)


def test_shape_error_names_layer():
    layer = Dense('head.dense0', 4, 2)
    with pytest.raises(ShapeError) as info:
        layer.forward(np.zeros((3, 5), dtype=np.float32))
    assert info.value.layer == 'head.dense0'
    assert info.value.expected == (None, 4)
    assert info.value.actual == (3, 5)


def test_dropout_modes():
    layer = Dropout('o', 0.0)
    x = np.random.default_rng(0).normal(size=(4, 4)).astype(np.float32)
    train, _ = layer.forward(x, train=True, rng=np.random.default_rng(1))
    evaluated, _ = layer.forward(x)
    assert train.tobytes() == evaluated.tobytes()

    layer = Dropout('o', 0.5)
    evaluated, _ = layer.forward(x)
    np.testing.assert_array_equal(evaluated, x)
    with pytest.raises(ValueError):
        layer.forward(x, train=True)
    with pytest.raises(ValueError):
        Dropout('o', 1.0)


def test_dropout_keeps_expectation():
    layer = Dropout('o', 0.25)
    x = np.ones((200, 200))
    y, _ = layer.forward(x, train=True, rng=np.random.default_rng(0))
    assert abs(y.mean() - 1.0) < 0.02


def test_backward_requires_cache():
    net = Sequential([Dense('d', 2, 2, rng=np.random.default_rng(0))])
    _, cache = net.forward(np.ones((1, 2), dtype=np.float32))
    assert cache is None
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2), dtype=np.float32), cache)


def test_zero_loss_gradient_gives_zero_gradients():
    rng = np.random.default_rng(0)
    net = Sequential([Dense('d0', 3, 4, rng=rng), ReLU('r'), Dense('d1', 4, 1, rng=rng)])
    y, cache = net.forward(rng.normal(size=(5, 3)).astype(np.float32), train=True)
    grads = net.backward(np.zeros_like(y), cache)
    assert set(grads) == {k for k, _ in net.params.named_parameters()}
    assert all(not np.any(g) for g in grads.values())


def test_forward_backward_deterministic(tiny_classifier_arch):
    a = SubgoalClassifier.build(tiny_classifier_arch, seed=5)
    b = SubgoalClassifier.build(tiny_classifier_arch, seed=5)
    assert a.params.equals(b.params)

    rng = np.random.default_rng(0)
    batch = (rng.random((3, 32, 32, 3), dtype=np.float32),
             rng.random((3, 32, 32, 3), dtype=np.float32),
             np.array([1, 2, 3]), np.array([1.0, 0.0, 1.0], dtype=np.float32))
    loss_a, grads_a = a.loss_and_grads(batch, np.random.default_rng(1))
    loss_b, grads_b = b.loss_and_grads(batch, np.random.default_rng(1))
    assert loss_a == loss_b
    assert all(grads_a[k].tobytes() == grads_b[k].tobytes() for k in grads_a)


###############################################################################
# Optimizer
###############################################################################

def _scalar_params(value):
    layer = Dense('w', 1, 1, dtype=F64)
    layer.params['weight'][...] = value
    return NetParams([layer])


def test_adam_zero_gradients():
    params = _scalar_params(1.5)
    opt = OptimizerState(lr=0.1)
    grads = {'w.weight': np.zeros((1, 1)), 'w.bias': np.zeros(1)}
    adam_step(params, grads, opt)
    assert opt.step == 1
    assert opt.m == {} and opt.v == {}
    assert params.get_parameter('w.weight')[0, 0] == 1.5


def test_adam_first_step_size():
    params = _scalar_params(0.0)
    opt = OptimizerState(lr=0.1)
    adam_step(params, {'w.weight': np.ones((1, 1)), 'w.bias': np.zeros(1)}, opt)
    assert params.get_parameter('w.weight')[0, 0] == pytest.approx(-0.1, abs=1e-6)
    assert params.get_parameter('w.bias')[0] == 0.0


def test_adam_converges_on_quadratic():
    params = _scalar_params(0.0)
    opt = OptimizerState(lr=0.1)
    for _ in range(1000):
        w = params.get_parameter('w.weight')
        adam_step(params, {'w.weight': 2 * (w - 3.0), 'w.bias': np.zeros(1)}, opt)
    assert abs(params.get_parameter('w.weight')[0, 0] - 3.0) < 0.05


def test_adam_rejects_bad_gradients():
    params = _scalar_params(0.0)
    with pytest.raises(NonFiniteError) as info:
        adam_step(params, {'w.weight': np.full((1, 1), np.nan)}, OptimizerState())
    assert info.value.name == 'w.weight'
    with pytest.raises(ShapeError):
        adam_step(params, {'w.weight': np.ones(2)}, OptimizerState())


###############################################################################
# Losses
###############################################################################

def test_bce_values():
    loss, _ = bce_loss(0.5, 1)
    assert float(loss) == pytest.approx(np.log(2), abs=1e-6)
    loss, _ = bce_loss(1 - BCE_EPSILON, 1)
    assert float(loss) == pytest.approx(0.0, abs=1e-6)
    _, grad = bce_loss(0.25, 0)
    assert float(grad) == pytest.approx(4 / 3)


def test_bce_clamps_and_validates():
    loss, _ = bce_loss(np.array([0.0, 1.0]), np.array([1, 0]))
    assert np.all(np.isfinite(loss)) and np.all(loss > 0)
    loss, _ = bce_loss(np.array([0.3, 0.7]), np.array([0, 1]))
    assert np.all(loss >= 0)
    with pytest.raises(ValueError):
        bce_loss(0.5, 0.5)


def test_mse_and_softmax_cross_entropy():
    loss, grad = mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]))
    assert loss == pytest.approx(2.5)
    np.testing.assert_allclose(grad, [[1.0, 2.0]])

    loss, grad = softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 2]))
    assert loss == pytest.approx(np.log(3))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


###############################################################################
# SGNN1 checkpoints
###############################################################################

def test_checkpoint_round_trip(tmp_path, tiny_classifier_arch):
    model = SubgoalClassifier.build(tiny_classifier_arch, seed=11)
    path = tmp_path / 'model.sgnn'
    save_params(path, model.params)
    loaded = load_params(path)
    assert loaded.equals(model.params)
    assert [layer.kind for layer in loaded] == [layer.kind for layer in model.params]

    restored = SubgoalClassifier(tiny_classifier_arch, loaded)
    x = np.random.default_rng(0).random((2, 32, 32, 3), dtype=np.float32)
    a, _ = model.forward((x, x, np.array([0, 1])))
    b, _ = restored.forward((x, x, np.array([0, 1])))
    assert a.tobytes() == b.tobytes()


def test_checkpoint_format_errors(tmp_path):
    params = NetParams([Dense('d', 2, 3, rng=np.random.default_rng(0))])
    path = tmp_path / 'model.sgnn'
    save_params(path, params)
    data = path.read_bytes()

    bad = tmp_path / 'bad.sgnn'
    bad.write_bytes(b'XXXXX' + data[5:])
    with pytest.raises(FormatError):
        load_params(bad)

    bad.write_bytes(data[:-3])
    with pytest.raises(FormatError):
        load_params(bad)

    bad.write_bytes(data + b'\x00')
    with pytest.raises(FormatError):
        load_params(bad)
