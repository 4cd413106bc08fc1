#!/usr/bin/python
# -*- coding: utf-8 -*-

import numpy as np
import pytest

from subgoaltools.classifier import ClassifierArch, TrainConfig
from subgoaltools.dataset import generate_dataset
from subgoaltools.policy import PolicyArch, PolicyTrainConfig


@pytest.fixture(scope='session')
def small_dataset():
    """ Expert demonstrations shared by the whole session; never mutate. """
    return generate_dataset(60, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_classifier_arch():
    return ClassifierArch(widths=(4, 8), embed_dim=8, hidden=16, dropout=0.0)


@pytest.fixture
def tiny_policy_arch():
    return PolicyArch(widths=(4, 8), hidden=16)


@pytest.fixture
def quick_train_config():
    return TrainConfig(batch_size=8, steps=3, eval_interval=2, eval_examples=16,
                       holdout_fraction=0.2, queue_depth=0)


@pytest.fixture
def quick_policy_config():
    return PolicyTrainConfig(batch_size=8, steps=3, eval_interval=2, queue_depth=0)
