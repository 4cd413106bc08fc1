#!/usr/bin/python
# -*- coding: utf-8 -*-

import json

import numpy as np
import pytest

from subgoaltools.nn import Dense, NetParams
from subgoaltools.training import (
    TrainingError, TrainingLog, check_finite_loss, iterate_batches, load_checkpoint,
    save_checkpoint, sidecar_path, vocabulary_hash)


def _draw(rng):
    return rng.integers(0, 1000, size=4)


def test_threaded_batches_match_synchronous_order():
    sync = list(iterate_batches(_draw, np.random.default_rng(3), 20, depth=0))
    threaded = list(iterate_batches(_draw, np.random.default_rng(3), 20, depth=2))
    assert len(threaded) == 20
    assert all(np.array_equal(a, b) for a, b in zip(sync, threaded))


def test_producer_failure_is_raised():
    def broken(rng):
        raise ValueError('no data')

    with pytest.raises(RuntimeError):
        list(iterate_batches(broken, np.random.default_rng(0), 5, depth=1, name='broken'))


def test_consumer_can_stop_early():
    batches = iterate_batches(_draw, np.random.default_rng(0), 100, depth=2)
    first = next(batches)
    batches.close()
    assert first.shape == (4,)


def test_check_finite_loss():
    check_finite_loss(0, 0.5)
    with pytest.raises(TrainingError) as info:
        check_finite_loss(7, float('nan'), lr=0.1)
    assert info.value.step == 7
    assert info.value.diagnostics == {'lr': 0.1}


def test_training_log():
    training_log = TrainingLog()
    training_log.record(0, loss=np.float32(0.7), accuracy=0.5)
    training_log.record(10, loss=0.3)
    assert training_log.series('loss') == pytest.approx([0.7, 0.3])
    assert training_log.series('accuracy') == [0.5]
    assert json.dumps(training_log.to_dict())


def test_checkpoint_sidecar(tmp_path):
    params = NetParams([Dense('d', 2, 2, rng=np.random.default_rng(0))])
    path = tmp_path / 'model.sgnn'
    save_checkpoint(path, params, {'component': 'test', 'widths': (4, 8)})
    assert sidecar_path(path).exists()

    loaded, metadata = load_checkpoint(path)
    assert loaded.equals(params)
    assert metadata['component'] == 'test'
    assert metadata['widths'] == [4, 8]
    assert metadata['vocabulary_hash'] == vocabulary_hash()


def test_checkpoint_without_sidecar(tmp_path, caplog):
    params = NetParams([Dense('d', 2, 2)])
    path = tmp_path / 'model.sgnn'
    save_checkpoint(path, params, {})
    sidecar_path(path).unlink()
    loaded, metadata = load_checkpoint(path)
    assert metadata == {}
    assert 'no metadata sidecar' in caplog.text
