#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging
import signal
import sys

from dataclasses import replace
from timeit import default_timer

from . import utils
from .classifier import evaluate_accuracy, reverse_asymmetry, save_classifier
from .config import Config
from .dataset import save_dataset
from .experiment import (
    ComponentCache, build_stack, run_experiment, run_robustness, stored_metrics)
from .harness import ExperimentConfig, run_external
from .policy import evaluate_idm, save_controller
from .proposer import ManifestSource
from .report import emit_report

log = logging.getLogger(__name__)


class App:

    def __init__(self):
        self.args = Config.get_args()
        self.config = None
        self.cache = None
        self.status = 0
        self.commands = {
            'gen-data': self.gen_data,
            'train-classifier': self.train_classifier,
            'train-policy': self.train_policy,
            'train-idm': self.train_idm,
            'run': self.run,
            'report': self.report,
            'select': self.select,
        }

    def start(self):
        # Handle SIGTERM gracefully
        signal.signal(signal.SIGTERM, utils.sigterm_handler)
        start = default_timer()
        try:
            self.config = ExperimentConfig.from_args(self.args)
            log.info('Running "%s".', self.args.command)
            self.commands[self.args.command]()
        except (KeyboardInterrupt, SystemExit):
            log.warning('Interrupted.')
            self.status = 1
        except Exception as e:
            log.exception(e)
            self.status = 1
        finally:
            self.__cleanup()
            log.info('Finished "%s" in %.1f seconds.', self.args.command,
                     default_timer() - start)

        sys.exit(self.status)

    def __cache(self):
        if self.cache is None:
            self.cache = ComponentCache(self.args.cache_dir)
        return self.cache

    def __evaluation(self):
        return self.__cache().evaluation_dataset(self.config)

    def gen_data(self):
        dataset = self.__cache().dataset(self.config)
        log.info('Dataset: %d trajectories, %d instructions, expert success rate %.3f.',
                 len(dataset.trajectories), len(dataset.instruction_tokens()),
                 dataset.success_rate())
        if self.args.data_file:
            save_dataset(self.args.data_file, dataset)
            log.info('Dataset exported to: %s', self.args.data_file)

    def train_classifier(self):
        seed = self.args.train_seed
        model = self.__cache().classifier(self.config, self.args.classifier_aug, seed)
        examples = self.__cache().evaluation_examples(self.config, seed)
        accuracy = evaluate_accuracy(model, examples)
        margin, forward = reverse_asymmetry(model, self.__evaluation(), 200, seed)
        log.info('Classifier held-out accuracy %.3f, forward preferred on %.3f of positives '
                 '(mean margin %.3f).', accuracy, forward, margin)
        if self.args.component_output:
            save_classifier(self.args.component_output, model,
                            extra={'aug_mode': self.args.classifier_aug.name, 'seed': seed})
            log.info('Classifier exported to: %s', self.args.component_output)

    def train_policy(self):
        seed = self.args.train_seed
        policy = self.__cache().policy(self.config, self.args.policy_aug, seed)
        if self.args.component_output:
            save_controller(self.args.component_output, policy,
                            extra={'aug_mode': self.args.policy_aug.name, 'seed': seed})
            log.info('Policy exported to: %s', self.args.component_output)

    def train_idm(self):
        seed = self.args.train_seed
        model = self.__cache().idm(self.config, seed)
        result = evaluate_idm(model, self.__evaluation(), seed=seed + 1)
        log.info('Inverse dynamics R^2 %.3f, gripper accuracy %.3f.',
                 result['r2'], result['gripper_accuracy'])
        if self.args.component_output:
            save_controller(self.args.component_output, model, extra={'seed': seed})
            log.info('Inverse dynamics model exported to: %s', self.args.component_output)

    def run(self):
        if self.args.experiment == 'robustness':
            run_robustness(self.config, self.args.cache_dir, self.args.output_dir)
            return

        result = run_experiment(self.config, self.args.cache_dir, self.args.output_dir,
                                plot=self.args.plot)
        log.info('Run %s: %d metric rows, %d components trained.', result.run_id,
                 len(result.metrics), result.trained_components)

    def report(self):
        run_id, metrics = stored_metrics(self.args.cache_dir, self.args.run_id)
        log.info('Reporting run %s (%d metric rows).', run_id, len(metrics))
        emit_report(metrics, self.args.output_dir, plot=self.args.plot)

    def select(self):
        source = ManifestSource(self.args.candidate_manifest, self.config.proposer.clip_length)
        config = replace(self.config, proposer=replace(self.config.proposer, mode=source.mode))
        stack = build_stack(self.__cache(), config, 'both', len(source.candidates),
                            self.args.train_seed)
        _, result = run_external(source, stack, config)
        log.info('External candidates for "%s": %s after %d steps, %d decisions.',
                 source.manifest.instruction, 'success' if result.success else 'failure',
                 result.steps, len(result.decisions))

    def __cleanup(self):
        """ Handle shutdown tasks """
        if self.cache is not None:
            self.cache.database.close()
        log.info('Shutdown complete.')
