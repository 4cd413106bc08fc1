#!/usr/bin/python
# -*- coding: utf-8 -*-

from enum import Enum
from typing import Any
import os
import sys

import configargparse

from .augmentation import AugMode
from .harness import CELLS, CHAIN_LENGTH
from .proposer import ProposalMode
from .world import EvalSplit

CWD = os.path.dirname(os.path.realpath(__file__))
APP_PATH = os.path.realpath(os.path.join(CWD, '..'))

COMMANDS = ('gen-data', 'train-classifier', 'train-policy', 'train-idm', 'run', 'report',
            'select')


class Config:
    """ Singleton class that parses and holds all the configuration arguments """
    __args = None

    @staticmethod
    def get_args(argv=None):
        """ Static access method """
        if Config.__args is None:
            Config(argv)
        return Config.__args

    @staticmethod
    def clear():
        """ Forget the parsed arguments so the next access parses again """
        Config.__args = None

    def __init__(self, argv=None):
        """ Parse config/CLI arguments and setup workspace """
        if Config.__args is not None:
            raise Exception('This class is a singleton!')

        args = get_args(argv)
        self.__check_config(args)
        Config.__args = args

    def __check_config(self, args):
        """ Validate configuration values """
        if args.proposer_mode == ProposalMode.IMAGE and \
                args.refresh_period != args.subgoal_horizon:
            raise RuntimeError(
                f'Subgoal refresh period ({args.refresh_period}) must equal the '
                f'subgoal horizon ({args.subgoal_horizon}) for image proposals.')

        if args.severity_min > args.severity_max:
            raise RuntimeError('Minimum artifact severity is above the maximum.')

        if not 1 <= args.chain_length <= CHAIN_LENGTH:
            raise RuntimeError(f'Chain length must be between 1 and {CHAIN_LENGTH}.')

        if args.max_steps < 0:
            raise RuntimeError('Maximum steps per task must not be negative.')

        if args.workers <= 0:
            raise RuntimeError('Chain worker threads must be greater than 0.')

        if args.command == 'select' and not args.candidate_manifest:
            raise RuntimeError('The "select" command needs a candidate manifest.')


###############################################################################
# ArgParse helper class to deal with Enums.
# https://stackoverflow.com/questions/43968006/support-for-enum-arguments-in-argparse
###############################################################################

class EnumAction(configargparse.Action):
    """
    ArgParse Action for handling Enum types
    """
    def __init__(self, **kwargs):
        # Pop off the type value
        enum_type = kwargs.pop('type', None)

        # Ensure an Enum subclass is provided
        if enum_type is None:
            raise ValueError('type must be assigned an Enum when using EnumAction')
        if not issubclass(enum_type, Enum):
            raise TypeError('type must be an Enum when using EnumAction')

        # Generate choices from the Enum
        kwargs.setdefault('choices', tuple(e.name for e in enum_type))

        super(EnumAction, self).__init__(**kwargs)

        self._enum = enum_type

    def __call__(self,
                 parser: configargparse.ArgumentParser,
                 namespace: configargparse.Namespace,
                 value: Any,
                 option_string: str = None):
        # Convert value back into an Enum
        if isinstance(value, str):
            value = self._enum[value]
            setattr(namespace, self.dest, value)
        elif value is None:
            msg = f'You need to pass a value after {option_string}!'
            raise configargparse.ArgumentTypeError(msg)
        else:
            # A pretty invalid choice message will be generated by argparse
            raise configargparse.ArgumentTypeError()


###############################################################################
# ConfigArgParse definitions for current application.
# The following code should have minimal dependencies.
# https://docs.python.org/3/library/argparse.html
# Note: If the 'type' keyword is used with the 'default' keyword,
# the type converter is only applied if the default is a string.
###############################################################################

def get_args(argv=None):
    default_config = []

    config_file = os.path.normpath(
        os.path.join(APP_PATH, 'config/config.ini'))

    cli = argv if argv is not None else sys.argv[1:]
    if '-cf' not in cli and '--config' not in cli:
        default_config = [config_file]
    parser = configargparse.ArgParser(default_config_files=default_config)

    parser.add_argument('command',
                        help='Action to perform.',
                        choices=COMMANDS)
    parser.add_argument('-cf', '--config',
                        is_config_file=True, help='Set configuration file.')
    parser.add_argument('-v', '--verbose',
                        help='Control verbosity level, e.g. -v or -vv.',
                        action='count',
                        default=0)
    parser.add_argument('--log-path',
                        help='Directory where log files are saved.',
                        default='logs',
                        type=str_path)
    parser.add_argument('--cache-dir',
                        env_var='SUBGOAL_CACHE_DIR',
                        help=('Directory holding datasets, checkpoints and the '
                              'run registry. Default: cache.'),
                        default='cache',
                        type=str_path)
    parser.add_argument('--output-dir',
                        env_var='SUBGOAL_OUTPUT_DIR',
                        help='Directory where reports are written. Default: results.',
                        default='results',
                        type=str_path)

    group = parser.add_argument_group('World')
    group.add_argument('-Ds', '--dataset-size',
                       help='Number of demonstrations to generate. Default: 2000.',
                       default=2000,
                       type=int_positive)
    group.add_argument('-Dr', '--data-seed',
                       help='Seed of the demonstration dataset. Default: 0.',
                       default=0,
                       type=int)
    group.add_argument('-Df', '--data-file',
                       help=('Also export the generated dataset to this file. '
                             'Default: None (cache only).'),
                       default=None,
                       type=str_disable)
    group.add_argument('-Dv', '--eval-split',
                       help=('Instructions and scenes of every evaluation: SEEN or '
                             'UNSEEN (held-out instructions and colour). Default: UNSEEN.'),
                       default=EvalSplit.UNSEEN,
                       action=EnumAction,
                       type=EvalSplit)
    group.add_argument('-De', '--eval-dataset-size',
                       help='Demonstrations of the evaluation split. Default: 200.',
                       default=200,
                       type=int_positive)

    group = parser.add_argument_group('Training')
    group.add_argument('-Tr', '--train-seed',
                       help='Seed of single component training commands. Default: 0.',
                       default=0,
                       type=int)
    group.add_argument('-Tq', '--queue-depth',
                       help=('Batches prepared ahead by the producer thread, '
                             '0 builds them inline. Default: 2.'),
                       default=2,
                       type=int)
    group.add_argument('-Th', '--holdout-fraction',
                       help='Share of trajectories kept for validation. Default: 0.1.',
                       default=0.1,
                       type=float_ratio)
    group.add_argument('-Te', '--eval-interval',
                       help='Log training metrics every X steps. Default: 1000.',
                       default=1000,
                       type=int_positive)
    group.add_argument('-To', '--component-output',
                       help=('Also export the trained component to this file. '
                             'Default: None (cache only).'),
                       default=None,
                       type=str_disable)

    group = parser.add_argument_group('Classifier')
    group.add_argument('-Cs', '--classifier-steps',
                       help='Classifier optimizer steps. Default: 20000.',
                       default=20000,
                       type=int_positive)
    group.add_argument('-Cb', '--classifier-batch',
                       help='Classifier batch size. Default: 256.',
                       default=256,
                       type=int_positive)
    group.add_argument('-Cl', '--classifier-lr',
                       help='Classifier learning rate. Default: 3e-4.',
                       default=3e-4,
                       type=float_positive)
    group.add_argument('-Ca', '--classifier-aug',
                       help='Classifier pair augmentation. Default: DESYNCHRONIZED.',
                       default=AugMode.DESYNCHRONIZED,
                       action=EnumAction,
                       type=AugMode)

    group = parser.add_argument_group('Policy')
    group.add_argument('-Ps', '--policy-steps',
                       help='Goal-conditioned policy optimizer steps. Default: 10000.',
                       default=10000,
                       type=int_positive)
    group.add_argument('-Pb', '--policy-batch',
                       help='Goal-conditioned policy batch size. Default: 128.',
                       default=128,
                       type=int_positive)
    group.add_argument('-Pl', '--policy-lr',
                       help='Goal-conditioned policy learning rate. Default: 3e-4.',
                       default=3e-4,
                       type=float_positive)
    group.add_argument('-Pa', '--policy-aug',
                       help='Policy pair augmentation. Default: DESYNCHRONIZED.',
                       default=AugMode.DESYNCHRONIZED,
                       action=EnumAction,
                       type=AugMode)

    group = parser.add_argument_group('Inverse Dynamics')
    group.add_argument('-Is', '--idm-steps',
                       help='Inverse dynamics optimizer steps. Default: 10000.',
                       default=10000,
                       type=int_positive)
    group.add_argument('-Ib', '--idm-batch',
                       help='Inverse dynamics batch size. Default: 128.',
                       default=128,
                       type=int_positive)
    group.add_argument('-Il', '--idm-lr',
                       help='Inverse dynamics learning rate. Default: 3e-4.',
                       default=3e-4,
                       type=float_positive)

    group = parser.add_argument_group('Proposer')
    group.add_argument('-Gm', '--proposer-mode',
                       help='Propose goal images or video clips. Default: IMAGE.',
                       default=ProposalMode.IMAGE,
                       action=EnumAction,
                       type=ProposalMode)
    group.add_argument('-Gk', '--candidates',
                       help='Candidate subgoal counts to evaluate. Default: 8.',
                       nargs='+',
                       default=[8],
                       type=int_positive)
    group.add_argument('-Gp', '--off-task-prob',
                       help='Probability of an off-task candidate. Default: 0.3.',
                       default=0.3,
                       type=float_ratio)
    group.add_argument('--severity-min',
                       help='Minimum artifact severity. Default: 0.0.',
                       default=0.0,
                       type=float_ratio)
    group.add_argument('--severity-max',
                       help='Maximum artifact severity. Default: 0.5.',
                       default=0.5,
                       type=float_ratio)
    group.add_argument('--subgoal-horizon',
                       help='Steps between the observation and a goal image. Default: 20.',
                       default=20,
                       type=int_positive)
    group.add_argument('--clip-length',
                       help='Frames per proposed video clip. Default: 16.',
                       default=16,
                       type=int_positive)
    group.add_argument('-Gf', '--candidate-manifest',
                       help=('Manifest of externally proposed subgoals scored by the '
                             '"select" command. Default: None.'),
                       default=None,
                       type=str_disable)

    group = parser.add_argument_group('Experiment')
    group.add_argument('-Ex', '--experiment',
                       help='Experiment executed by "run". Default: ablation.',
                       choices=['ablation', 'robustness'],
                       default='ablation')
    group.add_argument('-Es', '--seeds',
                       help='Training and evaluation seeds. Default: 0 1 2 3.',
                       nargs='+',
                       default=[0, 1, 2, 3],
                       type=int)
    group.add_argument('-Ec', '--cells',
                       help='Ablation cells to run. Default: all.',
                       nargs='+',
                       choices=list(CELLS),
                       default=list(CELLS))
    group.add_argument('-En', '--chains',
                       help='Task chains per cell and seed. Default: 100.',
                       default=100,
                       type=int_positive)
    group.add_argument('--chain-length',
                       help=f'Tasks per chain. Default: {CHAIN_LENGTH}.',
                       default=CHAIN_LENGTH,
                       type=int)
    group.add_argument('--max-steps',
                       help='Step budget of every task. Default: 100.',
                       default=100,
                       type=int)
    group.add_argument('--refresh-period',
                       help='Steps between subgoal proposals. Default: 20.',
                       default=20,
                       type=int_positive)
    group.add_argument('-Ew', '--workers',
                       help='Concurrent chain evaluation threads. Default: 1.',
                       default=1,
                       type=int)
    group.add_argument('--robustness-episodes',
                       help='Episodes per robustness measurement. Default: 200.',
                       default=200,
                       type=int_positive)
    group.add_argument('--robustness-severity',
                       help='Artifact severity of corrupted goals. Default: 0.5.',
                       default=0.5,
                       type=float_ratio)

    group = parser.add_argument_group('Report')
    group.add_argument('-Rp', '--plot',
                       help='Also render summary.png.',
                       action='store_true')
    group.add_argument('-Ri', '--run-id',
                       help='Stored run to report on. Default: latest.',
                       default=None)
    args = parser.parse_args(argv)

    if args.verbose:
        parser.print_values()

    # Helper attributes
    setattr(args, "app_path", APP_PATH)

    return args


def int_positive(arg: int):
    value = int(arg)

    if value <= 0:
        raise ValueError('Value must be greater than 0!')

    return value


def float_positive(arg: float):
    value = float(arg)

    if value <= 0:
        raise ValueError('Value must be greater than 0!')

    return value


def float_ratio(arg: float):
    ratio = float(arg)

    if ratio < 0:
        raise ValueError('Minimum percentage is 0.0!')

    if ratio > 1:
        raise ValueError('Maximum percentage is 1.0!')

    return ratio


def str_path(arg: str):
    if arg is None:
        raise ValueError('Empty path specified!')

    if os.path.isabs(arg):
        path = arg
    else:
        path = os.path.abspath(f'{APP_PATH}/{arg}')

    # Create directory if path not found
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def str_disable(arg: str):
    if arg is None or arg.lower() in ['none', 'false']:
        return None

    return arg
