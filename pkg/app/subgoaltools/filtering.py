#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .proposer import ProposalMode
from .world import as_token

log = logging.getLogger(__name__)


class SubgoalScorer(Protocol):
    """ Anything that scores K goal images against one state and instruction. """

    def score_goals(self, s: np.ndarray, goals: np.ndarray, instruction) -> np.ndarray:
        ...


@dataclass(frozen=True)
class FilterDecision:
    selected: int
    scores: Optional[tuple] = None
    filtered: bool = True
    mode: ProposalMode = ProposalMode.IMAGE

    @property
    def selected_score(self):
        return None if self.scores is None else self.scores[self.selected]


def _check_candidates(candidates) -> ProposalMode:
    if not candidates:
        raise ValueError('Subgoal selection needs at least one candidate.')
    modes = {c.mode for c in candidates}
    if len(modes) != 1:
        raise ValueError('Candidates mix image and video proposals.')
    return modes.pop()


def select_subgoal(scorer: SubgoalScorer, s, candidates, instruction) -> FilterDecision:
    """
    Pick the candidate the scorer rates highest; ties go to the lowest index.

    Video candidates are scored on their final frame.
    """
    mode = _check_candidates(candidates)
    goals = np.stack([c.goal_image for c in candidates])
    if goals.shape[1:] != np.shape(s):
        raise ValueError(f'Candidate shape {goals.shape[1:]} does not match '
                         f'observation shape {np.shape(s)}.')

    scores = np.asarray(scorer.score_goals(s, goals, as_token(instruction)), dtype=np.float64)
    if scores.shape != (len(candidates),):
        raise ValueError(f'Scorer returned {scores.shape} scores for '
                         f'{len(candidates)} candidates.')

    selected = int(np.argmax(scores))
    return FilterDecision(selected, tuple(float(v) for v in scores), True, mode)


def select_random(candidates, rng) -> FilterDecision:
    """ Unfiltered baseline: a uniformly random candidate. """
    mode = _check_candidates(candidates)
    return FilterDecision(int(rng.integers(len(candidates))), None, False, mode)
