#!/usr/bin/python
# -*- coding: utf-8 -*-

from collections import Counter

import numpy as np
import pytest
from scipy import stats

from subgoaltools.sampler import (
    ClassifierExample, ExampleKind, SamplerConfig, make_negative, make_positive,
    reverse_direction, sample_batch, sample_positive, stack_examples)
from subgoaltools.world import IMAGE_SIZE, VOCABULARY, Action, Trajectory


def _ramp_trajectory(length, traj_id=0):
    """ Frame i is filled with value i so indexes can be read back from pixels. """
    frames = np.stack([np.full((IMAGE_SIZE, IMAGE_SIZE, 3), i, dtype=np.float32)
                       for i in range(length + 1)])
    return Trajectory(VOCABULARY[0], frames, tuple(Action() for _ in range(length)),
                      success=True, traj_id=traj_id)


def test_positive_horizon_is_uniform(small_dataset, rng):
    config = SamplerConfig()
    horizons = []
    while len(horizons) < 4500:
        example = sample_positive(small_dataset, config, rng)
        assert config.horizon_min <= example.horizon <= config.horizon_max
        if not example.clamped:
            assert example.goal_t - example.t == example.horizon
            horizons.append(example.horizon)

    counts = Counter(horizons)
    observed = [counts[h] for h in range(config.horizon_min, config.horizon_max + 1)]
    _, pvalue = stats.chisquare(observed)
    assert pvalue > 0.001


def test_positive_goal_is_clamped():
    trajectory = _ramp_trajectory(20)
    example = make_positive(trajectory, 10, 16)
    assert example.goal_t == 20 and example.clamped
    assert example.g[0, 0, 0] == 20.0 and example.s[0, 0, 0] == 10.0
    assert example.label == 1 and example.kind == ExampleKind.POSITIVE

    unclamped = make_positive(trajectory, 2, 16)
    assert unclamped.goal_t == 18 and not unclamped.clamped

    with pytest.raises(ValueError):
        make_positive(trajectory, 20, 16)


def test_reverse_direction_swaps_images():
    example = make_positive(_ramp_trajectory(30), 3, 20)
    reversed_example = reverse_direction(example)
    assert reversed_example.s is example.g and reversed_example.g is example.s
    assert reversed_example.token == example.token
    assert reversed_example.label == 0
    assert reversed_example.kind == ExampleKind.REVERSE_DIRECTION


def test_wrong_instruction_changes_token(small_dataset, rng):
    for _ in range(200):
        example = make_negative(small_dataset, ExampleKind.WRONG_INSTRUCTION, rng)
        assert example.label == 0
        source = small_dataset[example.source_id]
        assert example.token != source.token
        assert example.s is source.frames[example.t]


def test_wrong_goal_comes_from_another_trajectory(small_dataset, rng):
    for _ in range(200):
        example = make_negative(small_dataset, ExampleKind.WRONG_GOAL, rng)
        assert example.label == 0
        assert example.goal_source_id != example.source_id
        assert example.token == small_dataset[example.source_id].token


def test_make_negative_rejects_positive(small_dataset, rng):
    with pytest.raises(ValueError):
        make_negative(small_dataset, ExampleKind.POSITIVE, rng)


def test_example_label_consistency():
    image = np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        ClassifierExample(image, image, 0, 1, ExampleKind.WRONG_GOAL)
    with pytest.raises(ValueError):
        ClassifierExample(image, image, 0, 2, ExampleKind.POSITIVE)


def test_slot_distribution():
    kinds, probs = SamplerConfig().slot_distribution()
    mix = dict(zip(kinds, probs))
    assert mix[ExampleKind.POSITIVE] == pytest.approx(0.5)
    assert mix[ExampleKind.WRONG_INSTRUCTION] == pytest.approx(0.2)
    assert mix[ExampleKind.REVERSE_DIRECTION] == pytest.approx(0.2)
    assert mix[ExampleKind.WRONG_GOAL] == pytest.approx(0.1)

    with pytest.raises(ValueError):
        SamplerConfig(wrong_goal_share=0.5)
    with pytest.raises(ValueError):
        SamplerConfig(horizon_min=10, horizon_max=5)


def test_batch_composition(small_dataset, rng):
    n = 2000
    batch = sample_batch(small_dataset, n, SamplerConfig(), rng)
    assert len(batch) == n
    counts = Counter(e.kind for e in batch)
    expected = {ExampleKind.POSITIVE: 0.5, ExampleKind.WRONG_INSTRUCTION: 0.2,
                ExampleKind.REVERSE_DIRECTION: 0.2, ExampleKind.WRONG_GOAL: 0.1}
    for kind, p in expected.items():
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(counts[kind] / n - p) < 4 * sigma, kind.name


def test_batch_is_deterministic(small_dataset):
    a = sample_batch(small_dataset, 32, SamplerConfig(), np.random.default_rng(5))
    b = sample_batch(small_dataset, 32, SamplerConfig(), np.random.default_rng(5))
    assert [(e.kind, e.source_id, e.t, e.goal_t, e.token) for e in a] == \
        [(e.kind, e.source_id, e.t, e.goal_t, e.token) for e in b]


def test_stack_examples(small_dataset, rng):
    batch = sample_batch(small_dataset, 8, SamplerConfig(), rng)
    s, g, tokens, labels = stack_examples(batch)
    assert s.shape == g.shape == (8, IMAGE_SIZE, IMAGE_SIZE, 3)
    assert tokens.dtype == np.int64 and labels.dtype == np.float32
    np.testing.assert_array_equal(labels, [e.label for e in batch])
