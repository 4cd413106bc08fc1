#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging
import struct

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import FormatError
from .world import (
    MAX_STEPS, TRAIN_INSTRUCTIONS, Action, Instruction, Trajectory,
    instruction_from_token, render, reset, rollout_expert, step)

log = logging.getLogger(__name__)

DATASET_MAGIC = b'SGDS1'


@dataclass(frozen=True)
class ActionTrajectory:
    """ Trajectory seen through the action-only view: no instruction. """
    frames: np.ndarray
    actions: tuple
    traj_id: int

    def __len__(self):
        return len(self.actions)

    def action_array(self):
        return np.stack([a.as_array() for a in self.actions]) if self.actions \
            else np.zeros((0, 3), dtype=np.float32)


@dataclass(frozen=True)
class LanguageTrajectory:
    """ Trajectory seen through the language-only view: no actions. """
    instruction: Instruction
    frames: np.ndarray
    traj_id: int

    @property
    def token(self):
        return self.instruction.token


class Dataset:
    """
    Expert demonstrations with instruction-labelled, action-only and
    language-only views over the same trajectories.
    """

    def __init__(self, trajectories):
        self.trajectories = list(trajectories)
        self.__eligible = {}

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, index):
        return self.trajectories[index]

    def labeled(self):
        return [t for t in self.trajectories if t.instruction is not None]

    def action_only(self):
        return [ActionTrajectory(t.frames, t.actions, t.traj_id) for t in self.trajectories]

    def language_only(self):
        return [LanguageTrajectory(t.instruction, t.frames, t.traj_id)
                for t in self.trajectories if t.instruction is not None]

    def eligible_positives(self, min_length=0):
        """ Successful labelled trajectories longer than `min_length` steps. """
        if min_length not in self.__eligible:
            self.__eligible[min_length] = [
                t for t in self.trajectories
                if t.instruction is not None and t.success and len(t) > min_length]
        return self.__eligible[min_length]

    def instruction_tokens(self):
        return sorted({t.token for t in self.trajectories if t.instruction is not None})

    def success_rate(self) -> float:
        if not self.trajectories:
            return 0.0
        return sum(t.success for t in self.trajectories) / len(self.trajectories)

    def split(self, holdout_fraction):
        """ Split into (train, validation) by trajectory order. """
        if not 0.0 <= holdout_fraction < 1.0:
            raise ValueError(f'Invalid holdout fraction: {holdout_fraction}')
        n_val = int(round(len(self.trajectories) * holdout_fraction))
        cut = len(self.trajectories) - n_val
        return Dataset(self.trajectories[:cut]), Dataset(self.trajectories[cut:])


def draw_instructions(n_trajectories, seed, instruction_mix=None):
    """
    Instruction and reset seed for each trajectory of a generated dataset.

    `instruction_mix` maps instructions to weights (or lists instructions
    drawn uniformly); defaults to the training instructions.
    """
    if n_trajectories < 1:
        raise ValueError('A dataset needs at least one trajectory.')

    if instruction_mix is None:
        instruction_mix = TRAIN_INSTRUCTIONS
    if isinstance(instruction_mix, dict):
        instructions = list(instruction_mix.keys())
        weights = np.array([float(w) for w in instruction_mix.values()])
    else:
        instructions = list(instruction_mix)
        weights = np.ones(len(instructions))
    if not instructions or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError('Instruction mix needs at least one positive weight.')

    rng = np.random.default_rng(seed)
    picks = rng.choice(len(instructions), size=n_trajectories, p=weights / weights.sum())
    seeds = rng.integers(0, 2 ** 62, size=n_trajectories)
    return [(instructions[i], int(s)) for i, s in zip(picks, seeds)]


def generate_dataset(n_trajectories, seed, instruction_mix=None,
                     heldout_color=False, max_steps=MAX_STEPS) -> Dataset:
    trajectories = []
    for traj_id, (instruction, reset_seed) in enumerate(
            draw_instructions(n_trajectories, seed, instruction_mix)):
        state = reset(reset_seed, instruction, heldout_color)
        expert_rng = np.random.default_rng([reset_seed, 1])
        trajectories.append(rollout_expert(
            state, instruction, expert_rng, max_steps, reset_seed, traj_id, heldout_color))

    dataset = Dataset(trajectories)
    log.info('Generated %d trajectories (seed %d, expert success %.1f%%).',
             len(dataset), seed, 100 * dataset.success_rate())
    return dataset


###############################################################################
# SGDS1 dataset format (little endian)
#   magic "SGDS1" | u32 trajectory count | u32 H | u32 W | u32 C
#   per trajectory: u16 token | u64 reset seed | u8 scene flags | u32 frames F
#                   F*H*W*C float32 frames | (F-1)*3 float32 actions | u8 success
###############################################################################

def save_dataset(path, dataset: Dataset):
    if not len(dataset):
        raise ValueError('Refusing to save an empty dataset.')
    height, width, channels = dataset[0].frames.shape[1:]

    with open(path, 'wb') as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack('<4I', len(dataset), height, width, channels))
        for traj in dataset:
            f.write(struct.pack('<HQBI', traj.token, traj.seed,
                                int(traj.heldout_color), len(traj.frames)))
            f.write(np.ascontiguousarray(traj.frames, dtype='<f4').tobytes())
            f.write(np.ascontiguousarray(traj.action_array(), dtype='<f4').tobytes())
            f.write(struct.pack('<B', int(traj.success)))

    log.debug('Saved %d trajectories to: %s', len(dataset), path)


def load_dataset(path) -> Dataset:
    """ Load an SGDS1 file, rebuilding world states by replaying actions. """
    data = Path(path).read_bytes()
    offset = len(DATASET_MAGIC)
    if data[:offset] != DATASET_MAGIC:
        raise FormatError(f'Not an SGDS1 dataset: {path}')

    def take(size):
        nonlocal offset
        if offset + size > len(data):
            raise FormatError(f'Truncated dataset: {path}')
        chunk = data[offset:offset + size]
        offset += size
        return chunk

    count, height, width, channels = struct.unpack('<4I', take(16))
    frame_size = height * width * channels
    trajectories = []
    for traj_id in range(count):
        token, seed, flags, n_frames = struct.unpack('<HQBI', take(struct.calcsize('<HQBI')))
        if n_frames < 1:
            raise FormatError(f'Trajectory {traj_id} has no frames: {path}')
        frames = np.frombuffer(take(4 * n_frames * frame_size), dtype='<f4') \
            .reshape(n_frames, height, width, channels).astype(np.float32)
        raw_actions = np.frombuffer(take(4 * (n_frames - 1) * 3), dtype='<f4') \
            .reshape(n_frames - 1, 3)
        (success,) = struct.unpack('<B', take(1))

        instruction = instruction_from_token(token)
        heldout_color = bool(flags & 1)
        actions = tuple(Action.from_array(row) for row in raw_actions)
        state = reset(seed, instruction, heldout_color)
        states = [state]
        for action in actions:
            state = step(state, action)
            states.append(state)

        trajectories.append(Trajectory(instruction, frames, actions, tuple(states),
                                       bool(success), seed, traj_id, heldout_color))

    if offset != len(data):
        raise FormatError(f'Trailing bytes in dataset: {path}')
    return Dataset(trajectories)


def replay_matches(trajectory: Trajectory, atol=0.0) -> bool:
    """ True if re-rendering the replayed states reproduces the stored frames. """
    rendered = np.stack([render(s) for s in trajectory.states])
    return rendered.shape == trajectory.frames.shape and \
        np.allclose(rendered, trajectory.frames, atol=atol, rtol=0.0)
