#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

MAX_DELTA = 0.05
GRASP_RADIUS = 0.06
MIN_SEPARATION = 0.12
SUCCESS_RADIUS = 0.08
PLACE_TOLERANCE = 0.02
PLACEMENT_MARGIN = 0.1
EXPERT_NOISE = 0.005
MAX_STEPS = 100
IMAGE_SIZE = 32


class WorldError(RuntimeError):
    pass


class VocabularyError(ValueError):
    pass


class Shape(IntEnum):
    SQUARE = 0
    CIRCLE = 1
    TRIANGLE = 2


class Color(IntEnum):
    RED = 0
    GREEN = 1
    BLUE = 2
    YELLOW = 3
    PURPLE = 4


class ContainerKind(IntEnum):
    BOWL = 0
    BOX = 1


class Verb(IntEnum):
    PLACE_IN = 0
    STACK = 1


class Gripper(IntEnum):
    OPEN = 0
    CLOSED = 1


class GripperCommand(IntEnum):
    OPEN = 0
    CLOSE = 1
    NOOP = 2


TASK_COLORS = (Color.RED, Color.GREEN, Color.BLUE)
BLOCK = (Shape.SQUARE, Color.YELLOW)
HELDOUT_COLOR = Color.PURPLE


@dataclass(frozen=True)
class ObjectState:
    shape: Shape
    color: Color
    position: tuple
    held: bool = False

    @property
    def key(self):
        return self.shape, self.color


@dataclass(frozen=True)
class Container:
    kind: ContainerKind
    position: tuple


@dataclass(frozen=True)
class WorldState:
    agent: Optional[tuple]
    gripper: Gripper = Gripper.OPEN
    objects: tuple = ()
    containers: tuple = ()
    step_count: int = 0

    def find_object(self, shape, color) -> Optional[int]:
        for index, obj in enumerate(self.objects):
            if obj.shape == shape and obj.color == color:
                return index
        return None

    def find_container(self, kind) -> Optional[Container]:
        for container in self.containers:
            if container.kind == kind:
                return container
        return None

    def held_index(self) -> Optional[int]:
        for index, obj in enumerate(self.objects):
            if obj.held:
                return index
        return None


@dataclass(frozen=True)
class Instruction:
    verb: Verb
    shape: Shape
    color: Color
    target: Optional[ContainerKind] = None

    def __post_init__(self):
        if (self.verb == Verb.PLACE_IN) != (self.target is not None):
            raise VocabularyError(f'Invalid instruction target: {self.verb.name}, '
                                  f'{self.target}')

    @property
    def token(self) -> int:
        try:
            return TOKENS[self]
        except KeyError:
            raise VocabularyError(f'Instruction outside vocabulary: {self}') from None

    def referents(self):
        """ Object keys that must be present for the instruction to be achievable. """
        if self.verb == Verb.STACK:
            return [(self.shape, self.color), BLOCK]
        return [(self.shape, self.color)]

    def __str__(self):
        obj = f'{self.color.name.lower()} {self.shape.name.lower()}'
        if self.verb == Verb.STACK:
            return f'stack {obj} on block'
        return f'place {obj} in {self.target.name.lower()}'


def _build_vocabulary():
    vocabulary = []
    for container in ContainerKind:
        for shape in Shape:
            for color in TASK_COLORS:
                vocabulary.append(Instruction(Verb.PLACE_IN, shape, color, container))
    for shape in (Shape.CIRCLE, Shape.TRIANGLE):
        for color in TASK_COLORS:
            vocabulary.append(Instruction(Verb.STACK, shape, color))
    return tuple(vocabulary)


VOCABULARY = _build_vocabulary()
TOKENS = {instruction: token for token, instruction in enumerate(VOCABULARY)}

HELDOUT_INSTRUCTIONS = (
    Instruction(Verb.PLACE_IN, Shape.TRIANGLE, Color.BLUE, ContainerKind.BOX),
    Instruction(Verb.PLACE_IN, Shape.CIRCLE, Color.GREEN, ContainerKind.BOWL),
    Instruction(Verb.PLACE_IN, Shape.SQUARE, Color.RED, ContainerKind.BOX),
    Instruction(Verb.STACK, Shape.TRIANGLE, Color.GREEN),
)
TRAIN_INSTRUCTIONS = tuple(i for i in VOCABULARY if i not in HELDOUT_INSTRUCTIONS)


class EvalSplit(IntEnum):
    """
    SEEN evaluates the training instructions in training scenes. UNSEEN draws
    from the whole vocabulary, held-out instructions included, in scenes with
    a held-out colour distractor.
    """
    SEEN = 0
    UNSEEN = 1

    @property
    def instructions(self):
        return TRAIN_INSTRUCTIONS if self == EvalSplit.SEEN else VOCABULARY

    @property
    def heldout_color(self):
        return self == EvalSplit.UNSEEN


def instruction_from_token(token) -> Instruction:
    token = int(token)
    if not 0 <= token < len(VOCABULARY):
        raise VocabularyError(f'Unknown instruction token: {token}')
    return VOCABULARY[token]


def as_token(instruction) -> int:
    if isinstance(instruction, Instruction):
        return instruction.token
    return instruction_from_token(instruction).token


@dataclass(frozen=True)
class Action:
    dx: float = 0.0
    dy: float = 0.0
    gripper: GripperCommand = GripperCommand.NOOP

    def as_array(self):
        return np.array([self.dx, self.dy, int(self.gripper)], dtype=np.float32)

    @staticmethod
    def from_array(row):
        return Action(float(row[0]), float(row[1]), GripperCommand(int(row[2])))


@dataclass
class Trajectory:
    """
    An observed episode: T actions between T + 1 frames.

    `seed` is the reset seed of the episode so states can be rebuilt by replay.
    """
    instruction: Optional[Instruction]
    frames: np.ndarray
    actions: tuple
    states: tuple = ()
    success: bool = False
    seed: int = 0
    traj_id: int = 0
    heldout_color: bool = False

    def __post_init__(self):
        if len(self.frames) != len(self.actions) + 1:
            raise ValueError(f'Trajectory with {len(self.actions)} actions needs '
                             f'{len(self.actions) + 1} frames, got {len(self.frames)}.')

    def __len__(self):
        return len(self.actions)

    @property
    def token(self) -> int:
        return self.instruction.token

    def action_array(self):
        if not self.actions:
            return np.zeros((0, 3), dtype=np.float32)
        return np.stack([a.as_array() for a in self.actions])


###############################################################################
# Scene generation
###############################################################################

def _place(rng, count, min_separation=MIN_SEPARATION, margin=PLACEMENT_MARGIN,
           max_attempts=10000):
    """ Rejection-sample `count` points with pairwise distance >= min_separation. """
    points = []
    attempts = 0
    while len(points) < count:
        attempts += 1
        if attempts > max_attempts:
            raise WorldError(f'Unable to place {count} items in the workspace.')
        p = rng.uniform(margin, 1.0 - margin, size=2)
        if all(np.hypot(*(p - q)) >= min_separation for q in points):
            points.append(p)
    return [(float(p[0]), float(p[1])) for p in points]


def _build_scene(rng, instructions, n_distractors, heldout_color):
    keys = []
    for instruction in instructions:
        key = (instruction.shape, instruction.color)
        if key not in keys:
            keys.append(key)

    pool = [(s, c) for s in Shape for c in TASK_COLORS if (s, c) not in keys]
    picks = rng.choice(len(pool), size=min(n_distractors, len(pool)), replace=False)
    distractors = [pool[i] for i in picks]
    if heldout_color and distractors:
        distractors[-1] = (Shape(int(rng.integers(len(Shape)))), HELDOUT_COLOR)
    elif heldout_color:
        distractors = [(Shape(int(rng.integers(len(Shape)))), HELDOUT_COLOR)]

    object_keys = keys + distractors + [BLOCK]
    positions = _place(rng, len(object_keys) + len(ContainerKind))
    objects = tuple(ObjectState(shape, color, pos)
                    for (shape, color), pos in zip(object_keys, positions))
    containers = tuple(Container(kind, pos)
                       for kind, pos in zip(ContainerKind, positions[len(object_keys):]))
    agent = tuple(float(v) for v in rng.uniform(PLACEMENT_MARGIN, 1 - PLACEMENT_MARGIN, 2))
    return WorldState(agent, Gripper.OPEN, objects, containers, 0)


def reset(seed, instruction: Instruction, heldout_color=False) -> WorldState:
    """
    Deterministic initial scene for `instruction`: its referents, two
    distractor objects, the block and both containers.
    """
    rng = np.random.default_rng(seed)
    return _build_scene(rng, [instruction], 2, heldout_color)


def reset_chain(seed, instructions, heldout_color=False) -> WorldState:
    """ One scene holding the referents of every instruction in a task chain. """
    rng = np.random.default_rng(seed)
    return _build_scene(rng, list(instructions), 1, heldout_color)


###############################################################################
# Dynamics
###############################################################################

def _distance(a, b):
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def step(state: WorldState, action: Action) -> WorldState:
    dx = float(np.clip(action.dx, -MAX_DELTA, MAX_DELTA))
    dy = float(np.clip(action.dy, -MAX_DELTA, MAX_DELTA))
    agent = (float(np.clip(state.agent[0] + dx, 0.0, 1.0)),
             float(np.clip(state.agent[1] + dy, 0.0, 1.0)))

    objects = list(state.objects)
    gripper = state.gripper
    held = state.held_index()

    if action.gripper == GripperCommand.CLOSE:
        gripper = Gripper.CLOSED
        if held is None and objects:
            distances = [_distance(agent, obj.position) for obj in objects]
            nearest = int(np.argmin(distances))
            if distances[nearest] <= GRASP_RADIUS:
                held = nearest
    elif action.gripper == GripperCommand.OPEN:
        gripper = Gripper.OPEN
        if held is not None:
            objects[held] = replace(objects[held], held=False, position=agent)
            held = None

    if held is not None:
        objects[held] = replace(objects[held], held=True, position=agent)

    return WorldState(agent, gripper, tuple(objects), state.containers,
                      state.step_count + 1)


def target_position(state: WorldState, instruction: Instruction):
    if instruction.verb == Verb.STACK:
        index = state.find_object(*BLOCK)
        return None if index is None else state.objects[index].position
    container = state.find_container(instruction.target)
    return None if container is None else container.position


def task_success(state: WorldState, instruction: Instruction) -> bool:
    index = state.find_object(instruction.shape, instruction.color)
    target = target_position(state, instruction)
    if index is None or target is None:
        return False
    obj = state.objects[index]
    return not obj.held and _distance(obj.position, target) <= SUCCESS_RADIUS


def referents_present(state: WorldState, instruction: Instruction) -> bool:
    return all(state.find_object(*key) is not None for key in instruction.referents()) \
        and target_position(state, instruction) is not None


###############################################################################
# Scripted expert
###############################################################################

def _move(displacement, command, rng):
    delta = np.asarray(displacement, dtype=np.float64)
    largest = np.max(np.abs(delta))
    if largest > MAX_DELTA:
        delta = delta * (MAX_DELTA / largest)
    if rng is not None:
        delta = delta + rng.normal(0.0, EXPERT_NOISE, size=2)
    delta = np.clip(delta, -MAX_DELTA, MAX_DELTA).astype(np.float32)
    return Action(float(delta[0]), float(delta[1]), command)


def expert_action(state: WorldState, instruction: Instruction, rng=None) -> Action:
    """
    Greedy scripted expert: approach the referent with the gripper open,
    close on it, carry it with the gripper closed and open at the target.
    A wrongly held object is dropped first. Noise is only added with an rng.
    """
    index = state.find_object(instruction.shape, instruction.color)
    target = target_position(state, instruction)
    if index is None or target is None:
        raise WorldError(f'Referents of "{instruction}" are not in the scene.')

    if task_success(state, instruction):
        return Action(0.0, 0.0, GripperCommand.NOOP)

    held = state.held_index()
    if held is not None and held != index:
        return Action(0.0, 0.0, GripperCommand.OPEN)

    agent = np.asarray(state.agent)
    if held == index:
        displacement = np.asarray(target) - agent
        if np.hypot(*displacement) <= PLACE_TOLERANCE:
            return Action(0.0, 0.0, GripperCommand.OPEN)
        return _move(displacement, GripperCommand.CLOSE, rng)

    displacement = np.asarray(state.objects[index].position) - agent
    if np.hypot(*displacement) <= PLACE_TOLERANCE:
        return Action(0.0, 0.0, GripperCommand.CLOSE)
    return _move(displacement, GripperCommand.OPEN, rng)


def rollout_expert(state: WorldState, instruction: Instruction, rng=None,
                   max_steps=MAX_STEPS, seed=0, traj_id=0,
                   heldout_color=False) -> Trajectory:
    """ Roll the expert until success or `max_steps`, rendering every state. """
    states = [state]
    actions = []
    while not task_success(state, instruction) and len(actions) < max_steps:
        action = expert_action(state, instruction, rng)
        state = step(state, action)
        actions.append(action)
        states.append(state)

    frames = np.stack([render(s) for s in states])
    return Trajectory(instruction, frames, tuple(actions), tuple(states),
                      task_success(state, instruction), seed, traj_id, heldout_color)


###############################################################################
# Rendering
# Shapes are rasterised from signed distances with a one pixel soft edge so
# sub-pixel motion still changes the image.
###############################################################################

BACKGROUND = (0.82, 0.80, 0.74)
PALETTE = {
    Color.RED: (0.85, 0.15, 0.15),
    Color.GREEN: (0.15, 0.70, 0.20),
    Color.BLUE: (0.15, 0.30, 0.85),
    Color.YELLOW: (0.95, 0.85, 0.10),
    Color.PURPLE: (0.60, 0.20, 0.75),
}
CONTAINER_COLORS = {
    ContainerKind.BOWL: (0.55, 0.35, 0.20),
    ContainerKind.BOX: (0.35, 0.35, 0.40),
}
GRIPPER_COLORS = {
    Gripper.OPEN: (0.05, 0.05, 0.05),
    Gripper.CLOSED: (0.00, 0.85, 0.85),
}

_centers = (np.arange(IMAGE_SIZE) + 0.5) / IMAGE_SIZE
_PY, _PX = np.meshgrid(_centers, _centers, indexing='ij')
_TRIANGLE_NORMALS = np.array([[0.0, -1.0],
                              [np.sqrt(3) / 2, 0.5],
                              [-np.sqrt(3) / 2, 0.5]])


def _sd_disk(center, radius):
    return np.hypot(_PX - center[0], _PY - center[1]) - radius


def _sd_square(center, half):
    qx = np.abs(_PX - center[0]) - half
    qy = np.abs(_PY - center[1]) - half
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    return outside + np.minimum(np.maximum(qx, qy), 0.0)


def _sd_triangle(center, inradius):
    # Equilateral triangle; exact inside, approximate outside
    px = _PX - center[0]
    py = _PY - center[1]
    return np.max([n[0] * px + n[1] * py for n in _TRIANGLE_NORMALS], axis=0) - inradius


def _sd_object(obj):
    if obj.shape == Shape.SQUARE:
        return _sd_square(obj.position, 0.045)
    if obj.shape == Shape.CIRCLE:
        return _sd_disk(obj.position, 0.05)
    return _sd_triangle(obj.position, 0.03)


def _sd_container(container):
    if container.kind == ContainerKind.BOWL:
        return np.abs(_sd_disk(container.position, 0.075)) - 0.01
    return np.abs(_sd_square(container.position, 0.075)) - 0.01


def _paint(image, signed_distance, color):
    alpha = np.clip(0.5 - signed_distance * IMAGE_SIZE, 0.0, 1.0)[..., None]
    image *= 1.0 - alpha
    image += alpha * np.asarray(color)


def render(state: WorldState):
    """ 32 x 32 RGB float32 image of the state with values in [0, 1]. """
    image = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float64)
    image[...] = BACKGROUND

    for container in state.containers:
        _paint(image, _sd_container(container), CONTAINER_COLORS[container.kind])

    held = None
    for obj in state.objects:
        if obj.held:
            held = obj
            continue
        _paint(image, _sd_object(obj), PALETTE[obj.color])
    if held is not None:
        _paint(image, _sd_object(held), PALETTE[held.color])

    if state.agent is not None:
        ring = np.abs(_sd_disk(state.agent, 0.04)) - 0.008
        _paint(image, ring, GRIPPER_COLORS[state.gripper])

    return np.clip(image, 0.0, 1.0).astype(np.float32)

