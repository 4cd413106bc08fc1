#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from dataclasses import asdict, dataclass

import numpy as np

from .augmentation import AugMode, augment_pair
from .nn import (
    ConvEncoder, Dense, NetParams, Network, OptimizerState, ReLU, ShapeError, adam_step,
    backward_stack, forward_stack, mse_loss, softmax_cross_entropy)
from .training import (
    StepTimer, TrainingLog, check_finite_loss, iterate_batches, load_checkpoint,
    save_checkpoint)
from .world import IMAGE_SIZE, MAX_DELTA, Action, GripperCommand

log = logging.getLogger(__name__)

N_GRIPPER = len(GripperCommand)


@dataclass(frozen=True)
class PolicyArch:
    image_size: int = IMAGE_SIZE
    channels: int = 3
    widths: tuple = (16, 32, 64, 64)
    hidden: int = 256

    def __post_init__(self):
        object.__setattr__(self, 'widths', tuple(self.widths))
        if not self.widths or min(self.widths) < 1 or self.hidden < 1:
            raise ValueError('Policy sizes must be positive.')

    @property
    def feature_size(self):
        side = self.image_size
        for _ in self.widths:
            side = (side + 1) // 2
        return side * side * self.widths[-1]


@dataclass(frozen=True)
class PolicyTrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 128
    steps: int = 10000
    horizon_min: int = 16
    horizon_max: int = 24
    gripper_weight: float = 1.0
    eval_interval: int = 1000
    seed: int = 0
    queue_depth: int = 2

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps < 1:
            raise ValueError('Learning rate, batch size and steps must be positive.')
        if not 1 <= self.horizon_min <= self.horizon_max:
            raise ValueError(f'Invalid hindsight horizon range: '
                             f'[{self.horizon_min}, {self.horizon_max}]')
        if self.eval_interval < 1:
            raise ValueError('Evaluation interval must be positive.')


def _build_head(params, n_in, hidden, rng, prefix='head'):
    params.add(Dense(f'{prefix}.dense0', n_in, hidden, rng=rng))
    params.add(ReLU(f'{prefix}.relu0'))
    params.add(Dense(f'{prefix}.dense1', hidden, hidden, rng=rng))
    params.add(ReLU(f'{prefix}.relu1'))
    params.add(Dense(f'{prefix}.out', hidden, 2 + N_GRIPPER, rng=rng))


def _head_layers(params, prefix='head'):
    return [params[f'{prefix}.{name}'] for name in
            ('dense0', 'relu0', 'dense1', 'relu1', 'out')]


def _check_images(arch, name, x):
    expected = (None, arch.image_size, arch.image_size, arch.channels)
    if x.ndim != 4 or x.shape[1:] != expected[1:]:
        raise ShapeError(name, expected, x.shape)


def action_targets(actions):
    """ Split (N, 3) expert actions into normalised motion and gripper classes. """
    motion = np.clip(actions[:, :2] / MAX_DELTA, -1.0, 1.0).astype(np.float32)
    return motion, actions[:, 2].astype(np.int64)


def action_loss(output, motion, gripper, gripper_weight=1.0):
    """ MSE on normalised motion plus weighted cross entropy on the gripper command. """
    motion_loss, dmotion = mse_loss(output[:, :2], motion)
    gripper_loss, dlogits = softmax_cross_entropy(output[:, 2:], gripper)
    grad = np.concatenate([dmotion, gripper_weight * dlogits], axis=1)
    return motion_loss + gripper_weight * gripper_loss, grad.astype(output.dtype)


def decode_actions(output):
    """ Network outputs to Actions: motion de-normalised and clipped, argmax gripper. """
    motion = np.clip(output[:, :2], -1.0, 1.0) * MAX_DELTA
    gripper = np.argmax(output[:, 2:], axis=1)
    return [Action(float(m[0]), float(m[1]), GripperCommand(int(c)))
            for m, c in zip(motion, gripper)]


class GoalConditionedPolicy(Network):
    """ pi(a | s, g): separate state and goal encoders, flattened, then an MLP. """

    def __init__(self, arch: PolicyArch, params: NetParams):
        super().__init__(params)
        self.arch = arch
        n_blocks = len(arch.widths)
        self.state_encoder = ConvEncoder(params, 'state', n_blocks, pooling='flatten')
        self.goal_encoder = ConvEncoder(params, 'goal', n_blocks, pooling='flatten')
        self.head = _head_layers(params)

    @staticmethod
    def build(arch: PolicyArch, seed):
        rng = np.random.default_rng(seed)
        params = NetParams()
        for prefix in ('state', 'goal'):
            ConvEncoder.build(params, prefix, arch.channels, arch.widths,
                              pooling='flatten', rng=rng)
        _build_head(params, 2 * arch.feature_size, arch.hidden, rng)
        return GoalConditionedPolicy(arch, params)

    def forward(self, inputs, train=False, rng=None):
        s, g = inputs
        _check_images(self.arch, 'state', s)
        _check_images(self.arch, 'goal', g)
        hs, state_cache = self.state_encoder.forward(s)
        hg, goal_cache = self.goal_encoder.forward(g)
        out, head_caches = forward_stack(self.head, np.concatenate([hs, hg], axis=1))
        cache = (state_cache, goal_cache, head_caches, hs.shape[1])
        return out, (cache if train else None)

    def _backward(self, grad, cache):
        state_cache, goal_cache, head_caches, split = cache
        grads = {}
        dh = backward_stack(self.head, grad, head_caches, grads)
        self.state_encoder.backward(dh[:, :split], state_cache, grads)
        self.goal_encoder.backward(dh[:, split:], goal_cache, grads)
        return grads

    def act(self, s, g) -> Action:
        out, _ = self.forward((s[None], g[None]))
        return decode_actions(out)[0]


class InverseDynamicsModel(Network):
    """ a_t from (frame_t, frame_t+1) concatenated on the channel axis. """

    def __init__(self, arch: PolicyArch, params: NetParams):
        super().__init__(params)
        self.arch = arch
        self.encoder = ConvEncoder(params, 'pair', len(arch.widths), pooling='flatten')
        self.head = _head_layers(params)

    @staticmethod
    def build(arch: PolicyArch, seed):
        rng = np.random.default_rng(seed)
        params = NetParams()
        ConvEncoder.build(params, 'pair', 2 * arch.channels, arch.widths,
                          pooling='flatten', rng=rng)
        _build_head(params, arch.feature_size, arch.hidden, rng)
        return InverseDynamicsModel(arch, params)

    def forward(self, inputs, train=False, rng=None):
        frame_t, frame_t1 = inputs
        _check_images(self.arch, 'frame_t', frame_t)
        _check_images(self.arch, 'frame_t1', frame_t1)
        h, encoder_cache = self.encoder.forward(np.concatenate([frame_t, frame_t1], axis=3))
        out, head_caches = forward_stack(self.head, h)
        return out, ((encoder_cache, head_caches) if train else None)

    def _backward(self, grad, cache):
        encoder_cache, head_caches = cache
        grads = {}
        dh = backward_stack(self.head, grad, head_caches, grads)
        self.encoder.backward(dh, encoder_cache, grads)
        return grads

    def act(self, frame_t, frame_t1) -> Action:
        out, _ = self.forward((frame_t[None], frame_t1[None]))
        return decode_actions(out)[0]


def policy_action(policy: GoalConditionedPolicy, s, g) -> Action:
    return policy.act(s, g)


def idm_action(model: InverseDynamicsModel, frame_t, frame_t1) -> Action:
    return model.act(frame_t, frame_t1)


def _trajectories_with_actions(dataset):
    trajectories = [t for t in dataset.action_only() if len(t) > 0]
    if not trajectories:
        raise ValueError('Dataset has no trajectory with actions.')
    return trajectories


def _fit(model, make_batch, config: PolicyTrainConfig, name):
    opt = OptimizerState(lr=config.learning_rate)
    batch_rng = np.random.default_rng([config.seed, 2])
    training_log = TrainingLog()
    timer = StepTimer()
    log.info('Training %s (%d steps, batch %d, %d parameters).', name, config.steps,
             config.batch_size, model.params.num_parameters())

    batches = iterate_batches(make_batch, batch_rng, config.steps, config.queue_depth,
                              name=f'{name}-batches')
    for step, (inputs, motion, gripper) in enumerate(batches):
        out, cache = model.forward(inputs, train=True)
        loss, grad = action_loss(out, motion, gripper, config.gripper_weight)
        check_finite_loss(step, loss, max_output=float(np.abs(out).max()))
        adam_step(model.params, model.backward(grad, cache), opt)
        training_log.steps_run = step + 1

        if step % config.eval_interval == 0 or step == config.steps - 1:
            accuracy = float(np.mean(np.argmax(out[:, 2:], axis=1) == gripper))
            training_log.record(step, loss=loss, gripper_accuracy=accuracy)
            log.info('%s step %d/%d: loss %.4f, gripper accuracy %.3f (%.1f steps/s).',
                     name, step, config.steps, loss, accuracy, timer.rate(step + 1))

    training_log.elapsed = timer.elapsed()
    training_log.final = {'loss': training_log.series('loss')[-1]}
    return training_log


def train_gc_policy(dataset, arch: PolicyArch, config: PolicyTrainConfig,
                    aug_mode: AugMode):
    """
    Behaviour cloning with hindsight goals: the goal for (s_t, a_t) is the
    frame k ~ U{horizon_min..horizon_max} steps later, clamped to the end.

    Returns:
        tuple: (GoalConditionedPolicy, TrainingLog)
    """
    trajectories = _trajectories_with_actions(dataset)
    actions = [t.action_array() for t in trajectories]
    policy = GoalConditionedPolicy.build(arch, config.seed)

    def make_batch(rng):
        states, goals, rows = [], [], []
        for _ in range(config.batch_size):
            index = int(rng.integers(len(trajectories)))
            trajectory = trajectories[index]
            t = int(rng.integers(len(trajectory)))
            k = int(rng.integers(config.horizon_min, config.horizon_max + 1))
            s, g = augment_pair(trajectory.frames[t],
                                trajectory.frames[min(t + k, len(trajectory))], aug_mode, rng)
            states.append(s)
            goals.append(g)
            rows.append(actions[index][t])
        motion, gripper = action_targets(np.stack(rows))
        return (np.stack(states), np.stack(goals)), motion, gripper

    training_log = _fit(policy, make_batch, config, f'gc-policy-{aug_mode.name.lower()}')
    return policy, training_log


def train_idm(dataset, arch: PolicyArch, config: PolicyTrainConfig,
              aug_mode: AugMode = AugMode.SYNCHRONIZED):
    """
    Train an inverse dynamics model on consecutive frame pairs.

    Returns:
        tuple: (InverseDynamicsModel, TrainingLog)
    """
    trajectories = _trajectories_with_actions(dataset)
    actions = [t.action_array() for t in trajectories]
    model = InverseDynamicsModel.build(arch, config.seed)

    def make_batch(rng):
        first, second, rows = [], [], []
        for _ in range(config.batch_size):
            index = int(rng.integers(len(trajectories)))
            trajectory = trajectories[index]
            t = int(rng.integers(len(trajectory)))
            a, b = augment_pair(trajectory.frames[t], trajectory.frames[t + 1], aug_mode, rng)
            first.append(a)
            second.append(b)
            rows.append(actions[index][t])
        motion, gripper = action_targets(np.stack(rows))
        return (np.stack(first), np.stack(second)), motion, gripper

    training_log = _fit(model, make_batch, config, 'idm')
    return model, training_log


def evaluate_idm(model: InverseDynamicsModel, dataset, n_pairs=1000, seed=0):
    """ R^2 of predicted motion and gripper accuracy on held-out frame pairs. """
    trajectories = _trajectories_with_actions(dataset)
    rng = np.random.default_rng(seed)
    first, second, rows = [], [], []
    for _ in range(n_pairs):
        trajectory = trajectories[int(rng.integers(len(trajectories)))]
        t = int(rng.integers(len(trajectory)))
        first.append(trajectory.frames[t])
        second.append(trajectory.frames[t + 1])
        rows.append(trajectory.action_array()[t])

    rows = np.stack(rows)
    out, _ = model.forward((np.stack(first), np.stack(second)))
    predicted = np.clip(out[:, :2], -1.0, 1.0) * MAX_DELTA
    residual = np.sum((predicted - rows[:, :2]) ** 2)
    total = np.sum((rows[:, :2] - rows[:, :2].mean(axis=0)) ** 2)
    return {
        'r2': float(1.0 - residual / total) if total > 0 else 0.0,
        'gripper_accuracy': float(np.mean(np.argmax(out[:, 2:], axis=1) == rows[:, 2])),
    }


def save_controller(path, model, training_log=None, extra=None):
    kind = 'idm' if isinstance(model, InverseDynamicsModel) else 'gc_policy'
    metadata = {'component': kind, 'arch': asdict(model.arch)}
    if training_log is not None:
        metadata['training'] = training_log.to_dict()
    metadata.update(extra or {})
    save_checkpoint(path, model.params, metadata)


def load_controller(path):
    """ Load a goal-conditioned policy or IDM checkpoint. """
    params, metadata = load_checkpoint(path)
    arch = PolicyArch(**metadata.get('arch', {}))
    if metadata.get('component') == 'idm':
        return InverseDynamicsModel(arch, params)
    return GoalConditionedPolicy(arch, params)
