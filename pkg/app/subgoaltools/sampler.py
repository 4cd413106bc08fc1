#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

log = logging.getLogger(__name__)


class ExampleKind(IntEnum):
    POSITIVE = 0
    WRONG_INSTRUCTION = 1
    WRONG_GOAL = 2
    REVERSE_DIRECTION = 3


@dataclass(frozen=True)
class ClassifierExample:
    """
    One (state, goal, instruction) triple with its label.

    Provenance fields record where the images came from: the source
    trajectory, the state and goal frame indexes, the drawn horizon and
    whether the goal index was clamped to the final frame.
    """
    s: np.ndarray
    g: np.ndarray
    token: int
    label: int
    kind: ExampleKind
    source_id: int = -1
    t: int = 0
    goal_t: int = 0
    horizon: int = 0
    clamped: bool = False
    goal_source_id: int = -1

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f'Invalid example label: {self.label}')
        if (self.label == 1) != (self.kind == ExampleKind.POSITIVE):
            raise ValueError(f'Label {self.label} inconsistent with kind {self.kind.name}')


@dataclass(frozen=True)
class SamplerConfig:
    horizon_min: int = 16
    horizon_max: int = 24
    positive_fraction: float = 0.5
    wrong_instruction_share: float = 0.4
    reverse_direction_share: float = 0.4
    wrong_goal_share: float = 0.2

    def __post_init__(self):
        if not 1 <= self.horizon_min <= self.horizon_max:
            raise ValueError(f'Invalid goal horizon range: '
                             f'[{self.horizon_min}, {self.horizon_max}]')
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError(f'Invalid positive fraction: {self.positive_fraction}')
        shares = (self.wrong_instruction_share, self.reverse_direction_share,
                  self.wrong_goal_share)
        if min(shares) < 0 or not np.isclose(sum(shares), 1.0):
            raise ValueError(f'Negative shares must be non-negative and sum to 1: {shares}')

    def slot_distribution(self):
        """ Per-slot categorical over example kinds. """
        negative = 1.0 - self.positive_fraction
        kinds = (ExampleKind.POSITIVE, ExampleKind.WRONG_INSTRUCTION,
                 ExampleKind.REVERSE_DIRECTION, ExampleKind.WRONG_GOAL)
        probs = np.array([self.positive_fraction,
                          negative * self.wrong_instruction_share,
                          negative * self.reverse_direction_share,
                          negative * self.wrong_goal_share])
        return kinds, probs / probs.sum()


def make_positive(trajectory, t, horizon) -> ClassifierExample:
    """ Positive example from frame `t`, goal `horizon` steps ahead (clamped). """
    last = len(trajectory)
    if not 0 <= t < last:
        raise ValueError(f'State index {t} outside trajectory of length {last}.')
    goal_t = min(t + horizon, last)
    return ClassifierExample(
        s=trajectory.frames[t], g=trajectory.frames[goal_t], token=trajectory.token,
        label=1, kind=ExampleKind.POSITIVE, source_id=trajectory.traj_id, t=t,
        goal_t=goal_t, horizon=horizon, clamped=t + horizon > last,
        goal_source_id=trajectory.traj_id)


def _eligible(dataset, config):
    pool = dataset.eligible_positives(config.horizon_min)
    if not pool:
        raise ValueError(f'No successful trajectory longer than {config.horizon_min} steps.')
    return pool


def sample_positive(dataset, config: SamplerConfig, rng) -> ClassifierExample:
    pool = _eligible(dataset, config)
    trajectory = pool[int(rng.integers(len(pool)))]
    t = int(rng.integers(len(trajectory)))
    horizon = int(rng.integers(config.horizon_min, config.horizon_max + 1))
    return make_positive(trajectory, t, horizon)


def reverse_direction(example: ClassifierExample) -> ClassifierExample:
    return replace(example, s=example.g, g=example.s, label=0,
                   kind=ExampleKind.REVERSE_DIRECTION)


def make_negative(dataset, kind: ExampleKind, rng,
                  config: SamplerConfig = SamplerConfig()) -> ClassifierExample:
    """
    Corrupt a freshly sampled positive into a negative of the given kind.

    Wrong instructions are resampled from the dataset until the token differs;
    wrong goals come from a different trajectory.
    """
    if kind == ExampleKind.POSITIVE:
        raise ValueError('make_negative() cannot build a positive example.')

    pool = _eligible(dataset, config)
    positive = sample_positive(dataset, config, rng)

    if kind == ExampleKind.REVERSE_DIRECTION:
        return reverse_direction(positive)

    if kind == ExampleKind.WRONG_INSTRUCTION:
        labeled = dataset.labeled()
        if len(dataset.instruction_tokens()) < 2:
            raise ValueError('Wrong-instruction negatives need two distinct instructions.')
        while True:
            other = labeled[int(rng.integers(len(labeled)))]
            if other.token != positive.token:
                break
        return replace(positive, token=other.token, label=0, kind=kind)

    if kind == ExampleKind.WRONG_GOAL:
        if len(pool) < 2:
            raise ValueError('Wrong-goal negatives need two eligible trajectories.')
        while True:
            other = sample_positive(dataset, config, rng)
            if other.source_id != positive.source_id:
                break
        return replace(positive, g=other.g, goal_t=other.goal_t,
                       goal_source_id=other.source_id, label=0, kind=kind)

    raise ValueError(f'Unknown example kind: {kind}')


def sample_batch(dataset, batch_size, config: SamplerConfig, rng):
    """ Batch where every slot independently draws its kind from the slot distribution. """
    if batch_size < 1:
        raise ValueError(f'Invalid batch size: {batch_size}')

    kinds, probs = config.slot_distribution()
    batch = []
    for choice in rng.choice(len(kinds), size=batch_size, p=probs):
        kind = kinds[choice]
        if kind == ExampleKind.POSITIVE:
            batch.append(sample_positive(dataset, config, rng))
        else:
            batch.append(make_negative(dataset, kind, rng, config))

    return [batch[i] for i in rng.permutation(batch_size)]


def stack_examples(examples):
    """ (states, goals, tokens, labels) arrays for a list of examples. """
    return (np.stack([e.s for e in examples]),
            np.stack([e.g for e in examples]),
            np.array([e.token for e in examples], dtype=np.int64),
            np.array([e.label for e in examples], dtype=np.float32))
