#!/usr/bin/python
# -*- coding: utf-8 -*-

from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from subgoaltools.world import (
    BACKGROUND, HELDOUT_COLOR, HELDOUT_INSTRUCTIONS, IMAGE_SIZE, MIN_SEPARATION,
    TRAIN_INSTRUCTIONS, VOCABULARY, Action, Color, Container, ContainerKind, Gripper,
    GripperCommand, Instruction, ObjectState, Shape, Trajectory, Verb, VocabularyError,
    WorldError, WorldState, expert_action, instruction_from_token, referents_present,
    render, reset, reset_chain, rollout_expert, step, task_success)

PLACE_RED_SQUARE = Instruction(Verb.PLACE_IN, Shape.SQUARE, Color.RED, ContainerKind.BOWL)
STACK_BLUE_CIRCLE = Instruction(Verb.STACK, Shape.CIRCLE, Color.BLUE)


def _positions(state):
    return [o.position for o in state.objects] + [c.position for c in state.containers]


def test_reset_is_deterministic():
    assert reset(17, PLACE_RED_SQUARE) == reset(17, PLACE_RED_SQUARE)
    assert reset(17, PLACE_RED_SQUARE) != reset(18, PLACE_RED_SQUARE)


def test_reset_separation_and_referents():
    for seed in range(1000):
        instruction = VOCABULARY[seed % len(VOCABULARY)]
        state = reset(seed, instruction, heldout_color=seed % 2 == 1)
        assert referents_present(state, instruction)
        assert state.gripper == Gripper.OPEN and state.step_count == 0
        for a, b in combinations(_positions(state), 2):
            assert np.hypot(a[0] - b[0], a[1] - b[1]) >= MIN_SEPARATION


def test_reset_chain_holds_every_referent():
    instructions = [VOCABULARY[i] for i in (0, 7, 14, 19, 22)]
    state = reset_chain(5, instructions)
    assert all(referents_present(state, i) for i in instructions)


def test_heldout_color_scene():
    state = reset(3, PLACE_RED_SQUARE, heldout_color=True)
    assert any(o.color == HELDOUT_COLOR for o in state.objects)
    assert not any(o.color == HELDOUT_COLOR for o in reset(3, PLACE_RED_SQUARE).objects)


def test_zero_action_only_advances_counter():
    state = reset(1, PLACE_RED_SQUARE)
    assert step(state, Action()) == replace(state, step_count=1)


def test_motion_is_clipped_and_clamped():
    state = WorldState(agent=(0.99, 0.5))
    moved = step(state, Action(0.2, -0.2))
    assert moved.agent[0] == 1.0
    assert moved.agent[1] == pytest.approx(0.45)


def test_grasp_radius():
    near = WorldState((0.5, 0.5), objects=(ObjectState(Shape.CIRCLE, Color.RED, (0.55, 0.5)),))
    grasped = step(near, Action(gripper=GripperCommand.CLOSE))
    assert grasped.gripper == Gripper.CLOSED
    assert grasped.objects[0].held
    assert grasped.objects[0].position == grasped.agent

    far = WorldState((0.5, 0.5), objects=(ObjectState(Shape.CIRCLE, Color.RED, (0.57, 0.5)),))
    missed = step(far, Action(gripper=GripperCommand.CLOSE))
    assert missed.gripper == Gripper.CLOSED
    assert not missed.objects[0].held


def test_held_object_follows_and_drops():
    state = WorldState((0.5, 0.5), objects=(ObjectState(Shape.CIRCLE, Color.RED, (0.5, 0.5)),))
    state = step(state, Action(gripper=GripperCommand.CLOSE))
    state = step(state, Action(0.05, 0.0, GripperCommand.NOOP))
    assert state.objects[0].position == pytest.approx((0.55, 0.5))
    state = step(state, Action(gripper=GripperCommand.OPEN))
    assert not state.objects[0].held
    assert state.gripper == Gripper.OPEN
    assert state.objects[0].position == pytest.approx((0.55, 0.5))


def test_render_shape_and_determinism():
    state = reset(4, STACK_BLUE_CIRCLE)
    image = render(state)
    assert image.shape == (IMAGE_SIZE, IMAGE_SIZE, 3)
    assert image.dtype == np.float32
    assert image.min() >= 0.0 and image.max() <= 1.0
    assert image.tobytes() == render(reset(4, STACK_BLUE_CIRCLE)).tobytes()


def test_render_reflects_colour():
    obj = ObjectState(Shape.CIRCLE, Color.RED, (0.5, 0.5))
    red = render(WorldState(None, objects=(obj,)))
    blue = render(WorldState(None, objects=(replace(obj, color=Color.BLUE),)))
    assert np.sum(np.any(red != blue, axis=2)) >= 4


def test_render_reflects_gripper_state():
    opened = render(WorldState((0.5, 0.5), Gripper.OPEN))
    closed = render(WorldState((0.5, 0.5), Gripper.CLOSED))
    assert np.any(opened != closed)


def test_empty_scene_is_background():
    image = render(WorldState(None))
    np.testing.assert_allclose(image, np.broadcast_to(BACKGROUND, image.shape), atol=1e-6)


def test_expert_moves_towards_referent():
    for seed in range(50):
        state = reset(seed, PLACE_RED_SQUARE)
        target = state.objects[state.find_object(Shape.SQUARE, Color.RED)].position
        displacement = np.subtract(target, state.agent)
        if np.hypot(*displacement) <= 0.02:
            continue
        action = expert_action(state, PLACE_RED_SQUARE)
        assert action.gripper == GripperCommand.OPEN
        assert np.dot([action.dx, action.dy], displacement) > 0


def test_expert_releases_over_container():
    bowl = Container(ContainerKind.BOWL, (0.3, 0.3))
    obj = ObjectState(Shape.SQUARE, Color.RED, (0.31, 0.3), held=True)
    state = WorldState((0.31, 0.3), Gripper.CLOSED, (obj,), (bowl,))
    assert expert_action(state, PLACE_RED_SQUARE).gripper == GripperCommand.OPEN


def test_expert_drops_wrong_object():
    bowl = Container(ContainerKind.BOWL, (0.8, 0.8))
    wrong = ObjectState(Shape.CIRCLE, Color.RED, (0.3, 0.3), held=True)
    right = ObjectState(Shape.SQUARE, Color.RED, (0.5, 0.5))
    state = WorldState((0.3, 0.3), Gripper.CLOSED, (wrong, right), (bowl,))
    assert expert_action(state, PLACE_RED_SQUARE) == Action(0.0, 0.0, GripperCommand.OPEN)


def test_expert_missing_referent():
    with pytest.raises(WorldError):
        expert_action(WorldState((0.5, 0.5)), PLACE_RED_SQUARE)


def test_task_success():
    bowl = Container(ContainerKind.BOWL, (0.3, 0.3))
    inside = ObjectState(Shape.SQUARE, Color.RED, (0.35, 0.32))
    assert task_success(WorldState(None, objects=(inside,), containers=(bowl,)),
                        PLACE_RED_SQUARE)
    held = replace(inside, held=True)
    assert not task_success(WorldState(None, objects=(held,), containers=(bowl,)),
                            PLACE_RED_SQUARE)
    outside = replace(inside, position=(0.5, 0.5))
    assert not task_success(WorldState(None, objects=(outside,), containers=(bowl,)),
                            PLACE_RED_SQUARE)
    assert not task_success(WorldState(None, objects=(inside,)), PLACE_RED_SQUARE)


def test_expert_solves_tasks():
    rng = np.random.default_rng(0)
    results = []
    for seed in range(60):
        instruction = VOCABULARY[seed % len(VOCABULARY)]
        trajectory = rollout_expert(reset(seed, instruction), instruction, rng, seed=seed)
        assert len(trajectory.frames) == len(trajectory) + 1
        results.append(trajectory.success)
    assert np.mean(results) >= 0.95


def test_vocabulary():
    assert len(VOCABULARY) == 24
    assert len(set(VOCABULARY)) == 24
    assert len(TRAIN_INSTRUCTIONS) == 20 and len(HELDOUT_INSTRUCTIONS) == 4
    assert not set(TRAIN_INSTRUCTIONS) & set(HELDOUT_INSTRUCTIONS)
    assert all(instruction_from_token(i.token) == i for i in VOCABULARY)
    assert str(STACK_BLUE_CIRCLE) == 'stack blue circle on block'

    with pytest.raises(VocabularyError):
        instruction_from_token(24)
    with pytest.raises(VocabularyError):
        Instruction(Verb.STACK, Shape.CIRCLE, Color.RED, ContainerKind.BOX)
    with pytest.raises(VocabularyError):
        Instruction(Verb.PLACE_IN, Shape.CIRCLE, HELDOUT_COLOR, ContainerKind.BOX).token


def test_trajectory_length_check():
    frames = np.zeros((3, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        Trajectory(PLACE_RED_SQUARE, frames, (Action(),))
    assert len(Trajectory(PLACE_RED_SQUARE, frames, (Action(), Action()))) == 2


@pytest.mark.slow
def test_expert_oracle_success_rate():
    rng = np.random.default_rng(1)
    successes = 0
    for seed in range(500):
        instruction = VOCABULARY[seed % len(VOCABULARY)]
        state = reset(10_000 + seed, instruction, heldout_color=seed % 2 == 1)
        successes += rollout_expert(state, instruction, rng, seed=seed).success
    assert successes / 500 >= 0.99
