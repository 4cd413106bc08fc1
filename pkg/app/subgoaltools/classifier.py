#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from dataclasses import asdict, dataclass, replace

import numpy as np

from .augmentation import AugMode, augment_pair
from .nn import (
    ConvEncoder, Dense, Dropout, Embedding, NetParams, Network, OptimizerState, ReLU,
    Sigmoid, ShapeError, adam_step, backward_stack, bce_loss, forward_stack)
from .proposer import inject_artifacts
from .sampler import SamplerConfig, sample_batch, sample_positive, stack_examples
from .training import (
    StepTimer, TrainingLog, check_finite_loss, iterate_batches, load_checkpoint,
    save_checkpoint)
from .world import IMAGE_SIZE, VOCABULARY, VocabularyError, as_token

log = logging.getLogger(__name__)

EVAL_CHUNK = 256


@dataclass(frozen=True)
class ClassifierArch:
    image_size: int = IMAGE_SIZE
    channels: int = 3
    widths: tuple = (16, 32, 64, 64)
    vocab_size: int = len(VOCABULARY)
    embed_dim: int = 64
    hidden: int = 256
    dropout: float = 0.1
    output_gain: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, 'widths', tuple(self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError(f'Invalid encoder widths: {self.widths}')
        if self.vocab_size < 1 or self.embed_dim < 1 or self.hidden < 1:
            raise ValueError('Classifier sizes must be positive.')


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 256
    steps: int = 20000
    eval_interval: int = 1000
    eval_examples: int = 512
    holdout_fraction: float = 0.1
    seed: int = 0
    queue_depth: int = 2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f'Invalid learning rate: {self.learning_rate}')
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError('Batch size and step count must be positive.')
        if self.eval_interval < 1 or self.eval_examples < 2:
            raise ValueError('Evaluation interval and example count must be positive.')


class SubgoalClassifier(Network):
    """
    Scores whether goal image g is a valid near-future subgoal from state s
    under the instruction.

    State and goal go through separate stride-2 conv encoders, each block
    modulated by FiLM from the instruction embedding; pooled features are
    concatenated and fed to a two-layer MLP with a sigmoid output.
    """

    def __init__(self, arch: ClassifierArch, params: NetParams):
        super().__init__(params)
        self.arch = arch
        n_blocks = len(arch.widths)
        self.embedding = params['instruction']
        self.state_encoder = ConvEncoder(params, 'state', n_blocks, conditioned=True)
        self.goal_encoder = ConvEncoder(params, 'goal', n_blocks, conditioned=True)
        self.head = [params[name] for name in (
            'head.dense0', 'head.relu0', 'head.dropout0',
            'head.dense1', 'head.relu1', 'head.dropout1',
            'head.out', 'head.sigmoid')]

    @staticmethod
    def build(arch: ClassifierArch, seed):
        rng = np.random.default_rng(seed)
        params = NetParams()
        params.add(Embedding('instruction', arch.vocab_size, arch.embed_dim, rng=rng))
        for prefix in ('state', 'goal'):
            ConvEncoder.build(params, prefix, arch.channels, arch.widths,
                              cond_dim=arch.embed_dim, pooling='avg', rng=rng)

        features = 2 * arch.widths[-1]
        params.add(Dense('head.dense0', features, arch.hidden, rng=rng))
        params.add(ReLU('head.relu0'))
        params.add(Dropout('head.dropout0', arch.dropout))
        params.add(Dense('head.dense1', arch.hidden, arch.hidden, rng=rng))
        params.add(ReLU('head.relu1'))
        params.add(Dropout('head.dropout1', arch.dropout))
        params.add(Dense('head.out', arch.hidden, 1, rng=rng, gain=arch.output_gain))
        params.add(Sigmoid('head.sigmoid'))
        return SubgoalClassifier(arch, params)

    def _check_inputs(self, s, g, tokens):
        size, channels = self.arch.image_size, self.arch.channels
        expected = (None, size, size, channels)
        for name, x in (('state', s), ('goal', g)):
            if x.ndim != 4 or x.shape[1:] != expected[1:]:
                raise ShapeError(name, expected, x.shape)
        if len(tokens) != len(s) or len(g) != len(s):
            raise ShapeError('batch', (len(s),), (len(g), len(tokens)))
        if len(tokens) and (np.min(tokens) < 0 or np.max(tokens) >= self.arch.vocab_size):
            raise VocabularyError(f'Instruction token outside vocabulary of size '
                                  f'{self.arch.vocab_size}.')

    def forward(self, inputs, train=False, rng=None):
        s, g, tokens = inputs
        tokens = np.asarray(tokens, dtype=np.int64)
        self._check_inputs(s, g, tokens)

        embedded, embed_cache = self.embedding.forward(tokens)
        hs, state_cache = self.state_encoder.forward(s, embedded, train, rng)
        hg, goal_cache = self.goal_encoder.forward(g, embedded, train, rng)
        h = np.concatenate([hs, hg], axis=1)
        p, head_caches = forward_stack(self.head, h, train, rng)

        cache = (embed_cache, state_cache, goal_cache, head_caches, hs.shape[1])
        return p[:, 0], (cache if train else None)

    def _backward(self, grad, cache):
        embed_cache, state_cache, goal_cache, head_caches, split = cache
        grads = {}
        dh = backward_stack(self.head, grad[:, None], head_caches, grads)
        _, dcond_s = self.state_encoder.backward(dh[:, :split], state_cache, grads)
        _, dcond_g = self.goal_encoder.backward(dh[:, split:], goal_cache, grads)
        _, embed_grads = self.embedding.backward(dcond_s + dcond_g, embed_cache)
        grads['instruction.table'] = embed_grads['table']
        return grads

    def loss_and_grads(self, batch, rng):
        """ Mean BCE over the batch and its parameter gradients. """
        s, g, tokens, labels = batch
        p, cache = self.forward((s, g, tokens), train=True, rng=rng)
        loss, dp = bce_loss(p, labels)
        grads = self.backward((dp / len(labels)).astype(p.dtype), cache)
        return float(loss.mean()), grads

    def predict(self, s, g, tokens):
        """ Eval-mode probabilities, computed in chunks. """
        out = []
        for start in range(0, len(s), EVAL_CHUNK):
            end = start + EVAL_CHUNK
            p, _ = self.forward((s[start:end], g[start:end], tokens[start:end]))
            out.append(p)
        return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)

    def score(self, s, g, instruction) -> float:
        token = as_token(instruction)
        p, _ = self.forward((s[None], g[None], np.array([token])))
        return float(p[0])

    def score_goals(self, s, goals, instruction):
        """ Scores of K candidate goals against one state; each row is independent. """
        goals = np.asarray(goals)
        token = as_token(instruction)
        states = np.broadcast_to(s, goals.shape)
        tokens = np.full(len(goals), token, dtype=np.int64)
        return self.predict(states, goals, tokens)


def init_classifier(arch: ClassifierArch, seed) -> SubgoalClassifier:
    return SubgoalClassifier.build(arch, seed)


def score(model: SubgoalClassifier, s, g, instruction) -> float:
    return model.score(s, g, instruction)


def can_evaluate(dataset, config: SamplerConfig = SamplerConfig()) -> bool:
    """ True if every example kind can be drawn from `dataset`. """
    return len(dataset.eligible_positives(config.horizon_min)) >= 2 and \
        len(dataset.instruction_tokens()) >= 2


def heldout_examples(dataset, n_examples, seed, config: SamplerConfig = SamplerConfig()):
    """ Fixed balanced example set: half positives, half negatives by the usual split. """
    rng = np.random.default_rng(seed)
    return sample_batch(dataset, n_examples, config, rng)


def evaluate_accuracy(model: SubgoalClassifier, examples, threshold=0.5) -> float:
    if not examples:
        raise ValueError('Accuracy needs at least one example.')
    s, g, tokens, labels = stack_examples(examples)
    p = model.predict(s, g, tokens)
    return float(np.mean((p >= threshold) == (labels == 1)))


def reverse_asymmetry(model: SubgoalClassifier, dataset, n_pairs, seed,
                      config: SamplerConfig = SamplerConfig()):
    """
    Mean of score(s, g) - score(g, s) over held-out positives, and the share
    of positives scored higher in the forward direction.
    """
    rng = np.random.default_rng(seed)
    positives = [sample_positive(dataset, config, rng) for _ in range(n_pairs)]
    s, g, tokens, _ = stack_examples(positives)
    diff = model.predict(s, g, tokens) - model.predict(g, s, tokens)
    return float(diff.mean()), float(np.mean(diff > 0))


def corrupted_accuracy(model: SubgoalClassifier, examples, severity, seed):
    """ Accuracy with every goal image passed through the proposer artifacts. """
    rng = np.random.default_rng(seed)
    corrupted = [replace(e, g=inject_artifacts(e.g, severity, rng)) for e in examples]
    return evaluate_accuracy(model, corrupted)


def train_classifier(dataset, arch: ClassifierArch, config: TrainConfig, aug_mode: AugMode,
                     sampler_config: SamplerConfig = SamplerConfig(), validation=None):
    """
    Train a subgoal classifier on balanced positive/negative batches.

    Args:
        dataset (Dataset): labelled demonstrations
        arch (ClassifierArch): network sizes
        config (TrainConfig): optimizer and schedule
        aug_mode (AugMode): Synchronized or Desynchronized pair augmentation
        sampler_config (SamplerConfig): example construction settings
        validation (Dataset): held-out split, carved from `dataset` if None

    Returns:
        tuple: (SubgoalClassifier, TrainingLog)
    """
    if validation is None:
        train_set, validation = dataset.split(config.holdout_fraction)
    else:
        train_set = dataset
    if not train_set.eligible_positives(sampler_config.horizon_min):
        raise ValueError('Training split has no eligible positive trajectory.')
    if not can_evaluate(validation, sampler_config):
        log.warning('Validation split too small, evaluating on the training split.')
        validation = train_set

    model = init_classifier(arch, config.seed)
    opt = OptimizerState(lr=config.learning_rate)
    dropout_rng = np.random.default_rng([config.seed, 1])
    batch_rng = np.random.default_rng([config.seed, 2])
    eval_set = heldout_examples(validation, config.eval_examples, config.seed + 1,
                                sampler_config)

    def make_batch(rng):
        examples = sample_batch(train_set, config.batch_size, sampler_config, rng)
        pairs = [augment_pair(e.s, e.g, aug_mode, rng) for e in examples]
        return (np.stack([p[0] for p in pairs]),
                np.stack([p[1] for p in pairs]),
                np.array([e.token for e in examples], dtype=np.int64),
                np.array([e.label for e in examples], dtype=np.float32))

    training_log = TrainingLog()
    timer = StepTimer()
    log.info('Training classifier (%s, %d steps, batch %d, %d parameters).',
             aug_mode.name, config.steps, config.batch_size, model.params.num_parameters())

    batches = iterate_batches(make_batch, batch_rng, config.steps, config.queue_depth,
                              name='classifier-batches')
    for step, batch in enumerate(batches):
        loss, grads = model.loss_and_grads(batch, dropout_rng)
        check_finite_loss(step, loss, label_mean=float(batch[3].mean()),
                          lr=config.learning_rate)
        adam_step(model.params, grads, opt)
        training_log.steps_run = step + 1

        if step % config.eval_interval == 0 or step == config.steps - 1:
            accuracy = evaluate_accuracy(model, eval_set)
            training_log.record(step, loss=loss, accuracy=accuracy)
            log.info('Classifier step %d/%d: loss %.4f, held-out accuracy %.3f '
                     '(%.1f steps/s).', step, config.steps, loss, accuracy,
                     timer.rate(step + 1))

    training_log.elapsed = timer.elapsed()
    training_log.final = {'accuracy': training_log.series('accuracy')[-1],
                          'loss': training_log.series('loss')[-1]}
    return model, training_log


def save_classifier(path, model: SubgoalClassifier, training_log=None, extra=None):
    metadata = {'component': 'classifier', 'arch': asdict(model.arch)}
    if training_log is not None:
        metadata['training'] = training_log.to_dict()
    metadata.update(extra or {})
    save_checkpoint(path, model.params, metadata)


def load_classifier(path) -> SubgoalClassifier:
    params, metadata = load_checkpoint(path)
    arch = ClassifierArch(**metadata.get('arch', {}))
    return SubgoalClassifier(arch, params)
