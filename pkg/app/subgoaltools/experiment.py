#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging
import time

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augmentation import AugMode
from .classifier import (
    can_evaluate, corrupted_accuracy, evaluate_accuracy, heldout_examples,
    load_classifier, save_classifier, train_classifier)
from .dataset import generate_dataset, load_dataset, save_dataset
from .db import Database
from .harness import (
    CELLS, ControlStack, ExperimentConfig, Metrics, run_cell, run_episode)
from .models import Checkpoint, ComponentKind, MetricRow
from .policy import load_controller, save_controller, train_gc_policy, train_idm
from .proposer import ProposalMode
from .report import emit_report, write_robustness

log = logging.getLogger(__name__)


class ComponentCache:
    """
    Trained components and datasets cached on disk, indexed by the registry.

    A component is reused only when its registered config hash matches;
    otherwise it is rebuilt and the entry replaced.
    """

    def __init__(self, cache_dir, database: Database = None):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.database = database or Database(self.cache_dir)
        self.trained = 0
        self.__loaded = {}

    def get(self, name, kind: ComponentKind, config_hash, build, save, load):
        """
        Args:
            name (str): registry name
            kind (ComponentKind): component type
            config_hash (str): hash of everything the component depends on
            build (callable): () -> (component, train_steps, final_metric)
            save (callable): (path, component) -> None
            load (callable): (path) -> component
        """
        key = (name, config_hash)
        if key in self.__loaded:
            return self.__loaded[key]

        row = Checkpoint.lookup(name)
        if row is not None and row.config_hash == config_hash and Path(row.path).exists():
            log.info('Using cached %s: %s', name, row.path)
            component = load(row.path)
        else:
            if row is not None and row.config_hash != config_hash:
                log.warning('Cached %s was built from another configuration '
                            '(%s != %s), rebuilding.', name, row.config_hash, config_hash)
            component, train_steps, final_metric = build()
            suffix = '.sgds' if kind == ComponentKind.DATASET else '.sgnn'
            path = self.cache_dir / f'{name}-{config_hash}{suffix}'
            save(path, component)
            Checkpoint.register(name, kind, config_hash, path, train_steps, final_metric)
            self.trained += 1

        self.__loaded[key] = component
        return component

    def dataset(self, config: ExperimentConfig):
        def build():
            dataset = generate_dataset(config.dataset_size, config.data_seed)
            return dataset, 0, dataset.success_rate()

        return self.get('dataset', ComponentKind.DATASET, config.dataset_hash(),
                        build, save_dataset, load_dataset)

    def evaluation_dataset(self, config: ExperimentConfig):
        """ Demonstrations of the evaluation split, shared by every held-out measurement. """
        split = config.eval_split

        def build():
            dataset = generate_dataset(config.eval_dataset_size, config.evaluation_seed(),
                                       split.instructions, split.heldout_color)
            return dataset, 0, dataset.success_rate()

        return self.get(f'dataset-{split.name.lower()}', ComponentKind.DATASET,
                        config.evaluation_hash(), build, save_dataset, load_dataset)

    def evaluation_examples(self, config: ExperimentConfig, seed):
        """ Fixed balanced classifier examples drawn from the evaluation split. """
        dataset = self.evaluation_dataset(config)
        if not can_evaluate(dataset, config.sampler):
            log.warning('Evaluation split too small, drawing examples from the training data.')
            dataset = self.dataset(config)
        return heldout_examples(dataset, config.classifier_train.eval_examples, seed + 1,
                                config.sampler)

    def classifier(self, config: ExperimentConfig, aug_mode: AugMode, seed):
        def build():
            model, training_log = train_classifier(
                self.dataset(config), config.classifier_arch,
                replace(config.classifier_train, seed=seed), aug_mode, config.sampler,
                validation=self.evaluation_dataset(config))
            return model, training_log.steps_run, training_log.final['accuracy']

        def save(path, model):
            save_classifier(path, model, extra={'aug_mode': aug_mode.name, 'seed': seed})

        return self.get(f'classifier-{aug_mode.name.lower()}-s{seed}',
                        ComponentKind.CLASSIFIER, config.classifier_hash(aug_mode, seed),
                        build, save, load_classifier)

    def policy(self, config: ExperimentConfig, aug_mode: AugMode, seed):
        def build():
            model, training_log = train_gc_policy(
                self.dataset(config), config.policy_arch,
                replace(config.policy_train, seed=seed), aug_mode)
            return model, training_log.steps_run, training_log.final['loss']

        def save(path, model):
            save_controller(path, model, extra={'aug_mode': aug_mode.name, 'seed': seed})

        return self.get(f'policy-{aug_mode.name.lower()}-s{seed}', ComponentKind.POLICY,
                        config.policy_hash(aug_mode, seed), build, save, load_controller)

    def idm(self, config: ExperimentConfig, seed):
        def build():
            model, training_log = train_idm(
                self.dataset(config), config.policy_arch,
                replace(config.idm_train, seed=seed))
            return model, training_log.steps_run, training_log.final['loss']

        def save(path, model):
            save_controller(path, model, extra={'seed': seed})

        return self.get(f'idm-s{seed}', ComponentKind.IDM, config.idm_hash(seed),
                        build, save, load_controller)


@dataclass
class ExperimentResult:
    run_id: str
    metrics: list = field(default_factory=list)
    trained_components: int = 0
    output_dir: Path = None


def build_stack(cache: ComponentCache, config: ExperimentConfig, cell, k, seed):
    ablation = CELLS[cell]
    aug_mode = AugMode.DESYNCHRONIZED if ablation.desynchronized else AugMode.SYNCHRONIZED
    proposer = replace(config.proposer, k=k)
    stack = ControlStack(proposer, filtering=ablation.filtering)
    if ablation.filtering:
        stack.classifier = cache.classifier(config, aug_mode, seed)
    if proposer.mode == ProposalMode.IMAGE:
        stack.policy = cache.policy(config, aug_mode, seed)
    else:
        stack.idm = cache.idm(config, seed)
    stack.validate()
    return stack


def new_run_id():
    return time.strftime('%Y%m%d_%H%M%S')


def run_experiment(config: ExperimentConfig, cache_dir, output_dir, plot=False):
    """
    Run the ablation grid: every cell x candidate count x seed, training or
    loading components as needed, then persist and report the metrics.
    """
    cache = ComponentCache(cache_dir)
    run_id = new_run_id()
    log.info('Starting run %s: cells %s, K %s, seeds %s, %d chains per seed.', run_id,
             ', '.join(config.cells), config.candidates, config.seeds, config.chains)

    metrics = []
    for cell in config.cells:
        for k in config.candidates:
            for seed in config.seeds:
                stack = build_stack(cache, config, cell, k, seed)
                metrics.append(run_cell(cell, k, seed, stack, config))

    MetricRow.bulk_insert([metrics_row(run_id, m) for m in metrics])
    emit_report(metrics, output_dir, plot=plot)
    log.info('Run %s complete (%d components trained).', run_id, cache.trained)
    return ExperimentResult(run_id, metrics, cache.trained, Path(output_dir))


def metrics_row(run_id, metrics: Metrics):
    row = {'run_id': run_id, 'cell': metrics.cell, 'k': metrics.k, 'seed': metrics.seed,
           'avg_len': metrics.avg_len, 'off_task_rate': metrics.off_task_rate,
           'wall_clock': metrics.wall_clock}
    for n, value in enumerate(metrics.completion, start=1):
        row[f'n{n}'] = value
    return row


def stored_metrics(cache_dir, run_id=None):
    """ Metrics of a stored run (the latest by default) from the registry. """
    Database(cache_dir)
    run_id = run_id or MetricRow.latest_run_id()
    if run_id is None:
        raise RuntimeError(f'No stored run found in: {cache_dir}')

    metrics = []
    for row in MetricRow.for_run(run_id):
        completion = (row.n1, row.n2, row.n3, row.n4, row.n5)
        metrics.append(Metrics(row.cell, row.k, row.seed, completion, row.avg_len,
                               row.off_task_rate, wall_clock=row.wall_clock))
    return run_id, metrics


###############################################################################
# Robustness of Synchronized vs Desynchronized training to goal artifacts
###############################################################################

def _policy_success(policy, config: ExperimentConfig, severity, seed):
    proposer = replace(config.proposer, mode=ProposalMode.IMAGE, k=1, off_task_prob=0.0,
                       severity_min=severity, severity_max=severity)
    stack = ControlStack(proposer, policy=policy)
    rng = np.random.default_rng([seed, 3])
    instructions = config.eval_split.instructions
    successes = 0
    for episode in range(config.robustness_episodes):
        instruction = instructions[int(rng.integers(len(instructions)))]
        result = run_episode(int(rng.integers(2 ** 62)), instruction, stack, config)
        successes += int(result.success)
    return successes / config.robustness_episodes


def run_robustness(config: ExperimentConfig, cache_dir, output_dir, seeds=None):
    """
    Clean vs corrupted goal performance of policies and classifiers trained
    with each augmentation mode.
    """
    cache = ComponentCache(cache_dir)
    severity = config.robustness_severity
    rows = []
    for seed in seeds if seeds is not None else config.seeds[:2]:
        examples = cache.evaluation_examples(config, seed)
        for aug_mode in AugMode:
            policy = cache.policy(config, aug_mode, seed)
            clean = _policy_success(policy, config, 0.0, seed)
            corrupted = _policy_success(policy, config, severity, seed)
            rows.append({'component': 'policy', 'aug_mode': aug_mode.name.lower(),
                         'seed': seed, 'clean': clean, 'corrupted': corrupted})

            classifier = cache.classifier(config, aug_mode, seed)
            clean = evaluate_accuracy(classifier, examples)
            corrupted = corrupted_accuracy(classifier, examples, severity, seed)
            rows.append({'component': 'classifier', 'aug_mode': aug_mode.name.lower(),
                         'seed': seed, 'clean': clean, 'corrupted': corrupted})

    for row in rows:
        log.info('Robustness %s/%s seed %d: clean %.3f, corrupted %.3f.', row['component'],
                 row['aug_mode'], row['seed'], row['clean'], row['corrupted'])
    write_robustness(rows, output_dir)
    return rows
