#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging
import queue

from dataclasses import asdict, dataclass, field, replace
from threading import Event, Lock, Thread
from timeit import default_timer
from typing import Callable, Optional

import numpy as np

from .classifier import ClassifierArch, TrainConfig
from .filtering import FilterDecision, select_random, select_subgoal
from .policy import PolicyArch, PolicyTrainConfig, idm_action, policy_action
from .proposer import ProposalMode, ProposerConfig, Provenance, propose
from .sampler import SamplerConfig
from .utils import derive_seed, stable_hash
from .world import (
    IMAGE_SIZE, MAX_STEPS, VOCABULARY, EvalSplit, Instruction, WorldState, render, reset,
    reset_chain, step, task_success)

log = logging.getLogger(__name__)

CHAIN_LENGTH = 5


@dataclass(frozen=True)
class CellSpec:
    filtering: bool
    desynchronized: bool


CELLS = {
    'baseline': CellSpec(filtering=False, desynchronized=False),
    'filter-only': CellSpec(filtering=True, desynchronized=False),
    'desync-only': CellSpec(filtering=False, desynchronized=True),
    'both': CellSpec(filtering=True, desynchronized=True),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """ Everything an ablation run depends on; library code never reads the CLI. """
    seeds: tuple = (0, 1, 2, 3)
    cells: tuple = tuple(CELLS)
    candidates: tuple = (8,)
    data_seed: int = 0
    dataset_size: int = 2000
    eval_split: EvalSplit = EvalSplit.UNSEEN
    eval_dataset_size: int = 200
    chains: int = 100
    chain_length: int = CHAIN_LENGTH
    max_steps: int = MAX_STEPS
    refresh_period: int = 20
    workers: int = 1
    robustness_episodes: int = 200
    robustness_severity: float = 0.5
    proposer: ProposerConfig = ProposerConfig(off_task_prob=0.3, severity_max=0.5)
    sampler: SamplerConfig = SamplerConfig()
    classifier_arch: ClassifierArch = ClassifierArch()
    classifier_train: TrainConfig = TrainConfig()
    policy_arch: PolicyArch = PolicyArch()
    policy_train: PolicyTrainConfig = PolicyTrainConfig()
    idm_train: PolicyTrainConfig = PolicyTrainConfig()

    def __post_init__(self):
        for name in ('seeds', 'cells', 'candidates'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        unknown = [cell for cell in self.cells if cell not in CELLS]
        if unknown:
            raise ValueError(f'Unknown ablation cells: {unknown}')
        if not self.seeds or not self.cells or not self.candidates:
            raise ValueError('Seeds, cells and candidate counts must not be empty.')
        if min(self.candidates) < 1:
            raise ValueError(f'Invalid candidate counts: {self.candidates}')
        if not 1 <= self.chain_length <= CHAIN_LENGTH:
            raise ValueError(f'Chain length must be in [1, {CHAIN_LENGTH}].')
        if self.chains < 1 or self.workers < 1 or self.dataset_size < 1 or \
                self.eval_dataset_size < 1:
            raise ValueError('Chains, workers and dataset sizes must be positive.')
        if self.max_steps < 0:
            raise ValueError(f'Invalid step budget: {self.max_steps}')
        if self.proposer.mode == ProposalMode.IMAGE and \
                self.refresh_period != self.proposer.horizon:
            raise ValueError(f'Refresh period ({self.refresh_period}) must equal the '
                             f'subgoal horizon ({self.proposer.horizon}).')

    @staticmethod
    def from_args(args):
        """ Build the run configuration from the parsed command line namespace. """
        proposer = ProposerConfig(
            mode=args.proposer_mode, k=max(args.candidates),
            off_task_prob=args.off_task_prob, severity_min=args.severity_min,
            severity_max=args.severity_max, horizon=args.subgoal_horizon,
            clip_length=args.clip_length)
        classifier_train = TrainConfig(
            learning_rate=args.classifier_lr, batch_size=args.classifier_batch,
            steps=args.classifier_steps, eval_interval=args.eval_interval,
            holdout_fraction=args.holdout_fraction, seed=args.train_seed,
            queue_depth=args.queue_depth)
        policy_train = PolicyTrainConfig(
            learning_rate=args.policy_lr, batch_size=args.policy_batch,
            steps=args.policy_steps, eval_interval=args.eval_interval,
            seed=args.train_seed, queue_depth=args.queue_depth)
        idm_train = PolicyTrainConfig(
            learning_rate=args.idm_lr, batch_size=args.idm_batch, steps=args.idm_steps,
            eval_interval=args.eval_interval, seed=args.train_seed,
            queue_depth=args.queue_depth)

        return ExperimentConfig(
            seeds=args.seeds, cells=args.cells, candidates=args.candidates,
            data_seed=args.data_seed, dataset_size=args.dataset_size,
            eval_split=args.eval_split, eval_dataset_size=args.eval_dataset_size,
            chains=args.chains,
            chain_length=args.chain_length, max_steps=args.max_steps,
            refresh_period=args.refresh_period, workers=args.workers,
            robustness_episodes=args.robustness_episodes,
            robustness_severity=args.robustness_severity, proposer=proposer,
            classifier_train=classifier_train, policy_train=policy_train,
            idm_train=idm_train)

    def to_dict(self):
        return asdict(self)

    def dataset_hash(self):
        return stable_hash({'size': self.dataset_size, 'seed': self.data_seed})

    def evaluation_seed(self):
        return derive_seed(self.data_seed, 1)

    def evaluation_hash(self):
        return stable_hash({'size': self.eval_dataset_size, 'seed': self.evaluation_seed(),
                            'split': self.eval_split})

    def classifier_hash(self, aug_mode, seed):
        return stable_hash({'data': self.dataset_hash(), 'eval': self.evaluation_hash(),
                            'arch': self.classifier_arch,
                            'train': replace(self.classifier_train, seed=seed),
                            'sampler': self.sampler, 'aug': aug_mode, 'seed': seed})

    def policy_hash(self, aug_mode, seed):
        return stable_hash({'data': self.dataset_hash(), 'arch': self.policy_arch,
                            'train': replace(self.policy_train, seed=seed),
                            'aug': aug_mode, 'seed': seed})

    def idm_hash(self, seed):
        return stable_hash({'data': self.dataset_hash(), 'arch': self.policy_arch,
                            'train': replace(self.idm_train, seed=seed), 'seed': seed})


@dataclass
class ControlStack:
    """ Proposer settings plus the learned components driving one cell. """
    proposer: ProposerConfig
    classifier: Optional[object] = None
    policy: Optional[object] = None
    idm: Optional[object] = None
    filtering: bool = False
    source: Optional[Callable] = None

    def validate(self):
        if self.proposer.mode == ProposalMode.IMAGE and self.policy is None:
            raise ValueError('Image proposals need a goal-conditioned policy.')
        if self.proposer.mode == ProposalMode.VIDEO and self.idm is None:
            raise ValueError('Video proposals need an inverse dynamics model.')
        if self.filtering and self.classifier is None:
            raise ValueError('Filtering needs a subgoal classifier.')
        source_mode = getattr(self.source, 'mode', self.proposer.mode)
        if source_mode != self.proposer.mode:
            raise ValueError(f'Candidate source yields {source_mode.name} proposals, the stack '
                             f'expects {self.proposer.mode.name}.')

        arch = getattr(self.classifier, 'arch', None)
        if self.filtering and arch is not None and arch.vocab_size != len(VOCABULARY):
            raise ValueError(f'Classifier vocabulary ({arch.vocab_size}) does not match '
                             f'the instruction vocabulary ({len(VOCABULARY)}).')
        for component in (self.classifier, self.policy, self.idm):
            arch = getattr(component, 'arch', None)
            if arch is not None and arch.image_size != IMAGE_SIZE:
                raise ValueError(f'{type(component).__name__} expects {arch.image_size}px '
                                 f'images, the world renders {IMAGE_SIZE}px.')


@dataclass(frozen=True)
class DecisionRecord:
    step: int
    decision: FilterDecision
    provenance: Provenance
    actual_token: Optional[int]


@dataclass
class EpisodeResult:
    instruction: Instruction
    success: bool
    steps: int
    final_state: WorldState
    decisions: list = field(default_factory=list)

    def provenance_counts(self):
        """ (off-task selections, selections with known provenance) """
        known = [d for d in self.decisions if d.provenance != Provenance.UNKNOWN]
        off_task = sum(d.provenance == Provenance.OFF_TASK for d in known)
        return off_task, len(known)


@dataclass
class ChainResult:
    length: int
    episodes: list


def run_episode(env_seed, instruction: Instruction, stack: ControlStack,
                config: ExperimentConfig, state: WorldState = None, rng=None) -> EpisodeResult:
    """
    Closed-loop control of one instruction.

    Image mode asks for a fresh subgoal every `refresh_period` steps and
    follows it with the goal-conditioned policy. Video mode executes the
    clip open loop through the inverse dynamics model, pairing consecutive
    frames starting from the real observation.
    Candidates come from the surrogate proposer unless the stack carries
    another source.
    """
    stack.validate()
    if state is None:
        state = reset(env_seed, instruction, config.eval_split.heldout_color)
    if rng is None:
        rng = np.random.default_rng([env_seed, instruction.token])

    steps = 0
    decisions = []
    success = task_success(state, instruction)
    while not success and steps < config.max_steps:
        observation = render(state)
        if stack.source is None:
            candidates = propose(stack.proposer, state, instruction, rng)
        else:
            candidates = stack.source(state, instruction, rng)
        if stack.filtering:
            decision = select_subgoal(stack.classifier, observation, candidates, instruction)
        else:
            decision = select_random(candidates, rng)
        chosen = candidates[decision.selected]
        decisions.append(DecisionRecord(steps, decision, chosen.provenance, chosen.actual_token))
        log.debug('Step %d "%s": picked candidate %d/%d (%s, scores %s).', steps,
                  instruction, decision.selected, len(candidates), chosen.provenance.name,
                  decision.scores)

        if stack.proposer.mode == ProposalMode.IMAGE:
            for _ in range(config.refresh_period):
                action = policy_action(stack.policy, render(state), chosen.image)
                state = step(state, action)
                steps += 1
                success = task_success(state, instruction)
                if success or steps >= config.max_steps:
                    break
        else:
            previous = observation
            for frame in chosen.clip:
                action = idm_action(stack.idm, previous, frame)
                previous = frame
                state = step(state, action)
                steps += 1
                success = task_success(state, instruction)
                if success or steps >= config.max_steps:
                    break

    return EpisodeResult(instruction, success, steps, state, decisions)


def run_task_chain(env_seed, instructions, stack: ControlStack,
                   config: ExperimentConfig) -> ChainResult:
    """ Run instructions in order in one scene; stop at the first failure. """
    state = reset_chain(env_seed, instructions, config.eval_split.heldout_color)
    episodes = []
    for index, instruction in enumerate(instructions):
        rng = np.random.default_rng([env_seed, index])
        result = run_episode(env_seed, instruction, stack, config, state=state, rng=rng)
        episodes.append(result)
        if not result.success:
            break
        state = result.final_state

    return ChainResult(sum(e.success for e in episodes), episodes)


def run_external(source, stack: ControlStack, config: ExperimentConfig, label='external'):
    """
    One episode in the scene an external candidate set was proposed for.

    Returns:
        tuple: (Metrics, EpisodeResult); provenance is unknown so the
            off-task rate is None
    """
    manifest = source.manifest
    stack = replace(stack, source=source)
    result = run_episode(manifest.env_seed, manifest.instruction, stack, config)
    for record in result.decisions:
        log.info('Step %d: selected external candidate %d of %d (scores %s).',
                 record.step, record.decision.selected, len(source.candidates),
                 record.decision.scores)
    chain = ChainResult(int(result.success), [result])
    metrics = Metrics.from_chains(label, len(source.candidates), 0, [chain])
    return metrics, result


def sample_chain(rng, instructions=VOCABULARY, length=CHAIN_LENGTH):
    """ `length` instructions whose manipulated objects are pairwise distinct. """
    chain = []
    used = set()
    for index in rng.permutation(len(instructions)):
        instruction = instructions[index]
        key = (instruction.shape, instruction.color)
        if key in used:
            continue
        chain.append(instruction)
        used.add(key)
        if len(chain) == length:
            return chain
    raise ValueError(f'Cannot build a chain of {length} tasks on distinct objects.')


@dataclass(frozen=True)
class ChainJob:
    index: int
    env_seed: int
    instructions: tuple


def chain_jobs(seed, n_chains, chain_length=CHAIN_LENGTH, instructions=VOCABULARY):
    """ The evaluation chains of one seed; identical for every cell. """
    jobs = []
    for index in range(n_chains):
        rng = np.random.default_rng([seed, index, 1])
        chain = sample_chain(rng, instructions, chain_length)
        jobs.append(ChainJob(index, derive_seed(seed, index), tuple(chain)))
    return jobs


@dataclass(frozen=True)
class Metrics:
    """
    Chain completion statistics of one cell/K/seed.

    `completion[n - 1]` is the fraction of chains completing at least n
    tasks, so the average chain length is their sum.
    """
    cell: str
    k: int
    seed: int
    completion: tuple
    avg_len: float
    off_task_rate: Optional[float] = None
    per_task_success: dict = field(default_factory=dict)
    chains: int = 0
    wall_clock: float = 0.0

    @property
    def label(self):
        return f'{self.cell}-k{self.k}'

    @staticmethod
    def from_chains(cell, k, seed, chains, wall_clock=0.0):
        if not chains:
            raise ValueError('Metrics need at least one chain.')

        lengths = np.array([c.length for c in chains])
        completion = tuple(float(np.mean(lengths >= n)) for n in range(1, CHAIN_LENGTH + 1))

        off_task, known = 0, 0
        attempts, successes = {}, {}
        for chain in chains:
            for episode in chain.episodes:
                o, n = episode.provenance_counts()
                off_task += o
                known += n
                token = episode.instruction.token
                attempts[token] = attempts.get(token, 0) + 1
                successes[token] = successes.get(token, 0) + int(episode.success)

        return Metrics(
            cell=cell, k=k, seed=seed, completion=completion,
            avg_len=float(sum(completion)),
            off_task_rate=off_task / known if known else None,
            per_task_success={t: successes[t] / attempts[t] for t in sorted(attempts)},
            chains=len(chains), wall_clock=wall_clock)


###############################################################################
# Chain worker pool
###############################################################################

class ChainWorker(Thread):
    """ Pulls chain jobs from the manager queue until it is empty. """

    def __init__(self, id: int, manager):
        super().__init__(name=f'chain-worker-{id:02d}', daemon=False)
        self.manager = manager
        self.interrupt = manager.interrupt

    def run(self):
        log.debug(f'{self.name} started.')
        while not self.interrupt.is_set():
            try:
                job = self.manager.jobs.get_nowait()
            except queue.Empty:
                break

            try:
                result = run_task_chain(job.env_seed, job.instructions,
                                        self.manager.stack, self.manager.config)
            except Exception as e:
                log.exception('Failed to run chain #%d: %s', job.index, e)
                self.manager.error = e
                self.interrupt.set()
                break

            self.manager.store(job.index, result)

        log.debug(f'{self.name} shutdown.')


class ChainManager():
    """
    Run task chains on a pool of worker threads.
    Every chain has its own seeds so results do not depend on scheduling.
    """

    def __init__(self, stack: ControlStack, config: ExperimentConfig):
        self.stack = stack
        self.config = config
        self.interrupt = Event()
        self.stats_lock = Lock()
        self.jobs = queue.Queue()
        self.results = {}
        self.error = None
        self.total_tasks = 0
        self.total_success = 0

    def store(self, index, result: ChainResult):
        with self.stats_lock:
            self.results[index] = result
            self.total_tasks += len(result.episodes)
            self.total_success += result.length

    def run(self, jobs):
        self.stack.validate()
        for job in jobs:
            self.jobs.put(job)

        workers = [ChainWorker(i, self) for i in range(min(self.config.workers, len(jobs)))]
        for worker in workers:
            worker.start()
        for worker in workers:
            worker.join()

        if self.error is not None:
            raise RuntimeError('Chain evaluation failed.') from self.error
        self.print_stats()
        return [self.results[job.index] for job in jobs]

    def print_stats(self):
        log.info('Chains: %d, tasks attempted: %d, tasks completed: %d.',
                 len(self.results), self.total_tasks, self.total_success)


def run_cell(cell, k, seed, stack: ControlStack, config: ExperimentConfig) -> Metrics:
    start = default_timer()
    jobs = chain_jobs(seed, config.chains, config.chain_length, config.eval_split.instructions)
    chains = ChainManager(stack, config).run(jobs)
    metrics = Metrics.from_chains(cell, k, seed, chains, default_timer() - start)
    log.info('Cell %s seed %d: avg. length %.3f, completion %s, off-task rate %s.',
             metrics.label, seed, metrics.avg_len,
             ' '.join(f'{v:.2f}' for v in metrics.completion),
             'n/a' if metrics.off_task_rate is None else f'{metrics.off_task_rate:.3f}')
    return metrics
