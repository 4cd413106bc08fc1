#!/usr/bin/python
# -*- coding: utf-8 -*-

import numpy as np
import pytest

from subgoaltools.filtering import FilterDecision, select_random, select_subgoal
from subgoaltools.proposer import ProposalMode, Provenance, SubgoalCandidate
from subgoaltools.world import VOCABULARY

SHAPE = (8, 8, 3)
INSTRUCTION = VOCABULARY[0]


class MeanScorer:
    """ Scores a goal by its mean pixel value and remembers what it was asked. """

    def __init__(self):
        self.calls = []

    def score_goals(self, s, goals, instruction):
        self.calls.append((goals.shape, instruction))
        return goals.mean(axis=(1, 2, 3))


def _candidate(value, mode=ProposalMode.IMAGE, provenance=Provenance.UNKNOWN):
    return SubgoalCandidate(np.full((1,) + SHAPE, value, dtype=np.float32), mode, provenance)


def test_selects_highest_score():
    scorer = MeanScorer()
    candidates = [_candidate(v) for v in (0.2, 0.9, 0.5)]
    decision = select_subgoal(scorer, np.zeros(SHAPE), candidates, INSTRUCTION)
    assert decision.selected == 1
    assert decision.filtered
    assert decision.selected_score == pytest.approx(0.9)
    assert scorer.calls == [((3,) + SHAPE, INSTRUCTION.token)]


def test_ties_go_to_lowest_index():
    candidates = [_candidate(v) for v in (0.1, 0.7, 0.7, 0.7)]
    assert select_subgoal(MeanScorer(), np.zeros(SHAPE), candidates, INSTRUCTION).selected == 1


def test_video_scored_on_final_frame():
    frames = np.zeros((16,) + SHAPE, dtype=np.float32)
    frames[-1] = 1.0
    late = SubgoalCandidate(frames, ProposalMode.VIDEO)
    frames = np.ones((16,) + SHAPE, dtype=np.float32)
    frames[-1] = 0.0
    early = SubgoalCandidate(frames, ProposalMode.VIDEO)
    decision = select_subgoal(MeanScorer(), np.zeros(SHAPE), [early, late], INSTRUCTION)
    assert decision.selected == 1


def test_single_candidate():
    decision = select_subgoal(MeanScorer(), np.zeros(SHAPE), [_candidate(0.3)], INSTRUCTION)
    assert decision.selected == 0


def test_invalid_selection():
    with pytest.raises(ValueError):
        select_subgoal(MeanScorer(), np.zeros(SHAPE), [], INSTRUCTION)
    with pytest.raises(ValueError):
        select_subgoal(MeanScorer(), np.zeros((4, 4, 3)), [_candidate(0.3)], INSTRUCTION)
    with pytest.raises(ValueError):
        select_random([], np.random.default_rng(0))


def test_decision_records_the_proposal_mode():
    clip = SubgoalCandidate(np.zeros((16,) + SHAPE, dtype=np.float32), ProposalMode.VIDEO)
    assert select_subgoal(MeanScorer(), np.zeros(SHAPE), [clip], INSTRUCTION).mode == \
        ProposalMode.VIDEO
    rng = np.random.default_rng(0)
    assert select_random([_candidate(0.4)], rng).mode == ProposalMode.IMAGE

    with pytest.raises(ValueError, match='mix'):
        select_subgoal(MeanScorer(), np.zeros(SHAPE), [clip, _candidate(0.4)], INSTRUCTION)
    with pytest.raises(ValueError, match='mix'):
        select_random([_candidate(0.4), clip], rng)


def test_selection_follows_candidate_order():
    rng = np.random.default_rng(3)
    for _ in range(50):
        values = rng.permutation(np.linspace(0.05, 0.95, 8))
        candidates = [_candidate(v) for v in values]
        decision = select_subgoal(MeanScorer(), np.zeros(SHAPE), candidates, INSTRUCTION)

        order = rng.permutation(len(candidates))
        shuffled = select_subgoal(MeanScorer(), np.zeros(SHAPE),
                                  [candidates[i] for i in order], INSTRUCTION)
        assert order[shuffled.selected] == decision.selected
        assert shuffled.scores == pytest.approx([decision.scores[i] for i in order])

def test_random_selection_is_uniform():
    rng = np.random.default_rng(0)
    candidates = [_candidate(v) for v in (0.1, 0.2, 0.3, 0.4)]
    picks = [select_random(candidates, rng) for _ in range(4000)]
    assert all(isinstance(d, FilterDecision) and not d.filtered for d in picks)
    assert all(d.scores is None and d.selected_score is None for d in picks)
    counts = np.bincount([d.selected for d in picks], minlength=4)
    assert np.all(np.abs(counts / 4000 - 0.25) < 4 * np.sqrt(0.25 * 0.75 / 4000))


@pytest.mark.parametrize('p,k', [(0.5, 1), (0.5, 4), (0.3, 8)])
def test_perfect_scorer_misses_only_when_all_off_task(p, k):
    """ An oracle picks an off-task subgoal only when every candidate is off task. """
    rng = np.random.default_rng(k)
    trials = 3000
    off_task = 0
    for _ in range(trials):
        candidates = []
        for _ in range(k):
            if rng.random() < p:
                candidates.append(_candidate(0.0, provenance=Provenance.OFF_TASK))
            else:
                candidates.append(_candidate(1.0, provenance=Provenance.ON_TASK))
        decision = select_subgoal(MeanScorer(), np.zeros(SHAPE), candidates, INSTRUCTION)
        off_task += candidates[decision.selected].provenance == Provenance.OFF_TASK

    expected = p ** k
    sigma = np.sqrt(expected * (1 - expected) / trials)
    assert abs(off_task / trials - expected) < 4 * sigma + 1 / trials
