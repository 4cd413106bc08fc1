#!/usr/bin/python
# -*- coding: utf-8 -*-

import json
import logging
import queue

from dataclasses import dataclass, field
from pathlib import Path
from threading import Event, Thread
from timeit import default_timer

import numpy as np

from .nn import load_params, save_params
from .utils import stable_hash, to_json
from .world import VOCABULARY

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """ Training diverged; carries the step, the loss and diagnostics. """
    def __init__(self, step, loss, diagnostics=None):
        self.step = step
        self.loss = loss
        self.diagnostics = diagnostics or {}
        super().__init__(f'Non-finite loss {loss} at step {step}: {self.diagnostics}')


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    steps_run: int = 0
    elapsed: float = 0.0

    def record(self, step, **values):
        entry = {'step': step}
        entry.update({k: float(v) for k, v in values.items()})
        self.records.append(entry)
        return entry

    def series(self, key):
        return [r[key] for r in self.records if key in r]

    def to_dict(self):
        return {'records': self.records, 'final': self.final,
                'steps_run': self.steps_run, 'elapsed': self.elapsed}


class BatchProducer(Thread):
    """
    Builds training batches ahead of the optimizer.

    Batches are pushed into a bounded queue in generation order, so the
    consumer sees the same sequence as a synchronous loop would.
    """

    def __init__(self, name, make_batch, rng, steps, depth=2):
        super().__init__(name=name, daemon=True)
        self.make_batch = make_batch
        self.rng = rng
        self.steps = steps
        self.interrupt = Event()
        self.queue = queue.Queue(maxsize=max(depth, 1))
        self.error = None

    def run(self):
        log.debug(f'{self.name} started.')
        try:
            for _ in range(self.steps):
                batch = self.make_batch(self.rng)
                while not self.interrupt.is_set():
                    try:
                        self.queue.put(batch, timeout=1.0)
                        break
                    except queue.Full:
                        continue

                if self.interrupt.is_set():
                    break
        except Exception as e:
            log.exception('Failed to build training batch: %s', e)
            self.error = e
            self.interrupt.set()

        log.debug(f'{self.name} shutdown.')

    def get(self):
        while True:
            try:
                return self.queue.get(timeout=1.0)
            except queue.Empty:
                if self.error is not None:
                    raise RuntimeError(f'{self.name} failed.') from self.error
                if not self.is_alive():
                    raise RuntimeError(f'{self.name} stopped before the last batch.')

    def stop(self):
        self.interrupt.set()
        self.join()


def iterate_batches(make_batch, rng, steps, depth=2, name='batch-producer'):
    """ Yield `steps` batches, built on a producer thread unless depth is 0. """
    if depth <= 0:
        for _ in range(steps):
            yield make_batch(rng)
        return

    producer = BatchProducer(name, make_batch, rng, steps, depth)
    producer.start()
    try:
        for _ in range(steps):
            yield producer.get()
    finally:
        producer.stop()


class StepTimer:
    """ Tracks wall clock time and step throughput of a training loop. """

    def __init__(self):
        self.start = default_timer()

    def elapsed(self):
        return default_timer() - self.start

    def rate(self, steps):
        elapsed = self.elapsed()
        return steps / elapsed if elapsed > 0 else 0.0


def check_finite_loss(step, loss, **diagnostics):
    if not np.isfinite(loss):
        raise TrainingError(step, float(loss), diagnostics)


def vocabulary_hash(vocabulary=VOCABULARY) -> str:
    return stable_hash([str(instruction) for instruction in vocabulary])


###############################################################################
# Checkpoints: SGNN1 parameters plus a JSON sidecar with metadata.
###############################################################################

def sidecar_path(path):
    return Path(path).with_suffix('.json')


def save_checkpoint(path, params, metadata: dict):
    path = Path(path)
    save_params(path, params)
    content = dict(metadata)
    content.setdefault('vocabulary_hash', vocabulary_hash())
    sidecar_path(path).write_text(to_json(content, indent=2), encoding='utf-8')
    log.info('Saved checkpoint: %s', path)


def load_checkpoint(path):
    """ Returns (NetParams, metadata); warns on vocabulary drift. """
    path = Path(path)
    params = load_params(path)
    metadata = {}
    sidecar = sidecar_path(path)
    if sidecar.exists():
        metadata = json.loads(sidecar.read_text(encoding='utf-8'))
    else:
        log.warning('Checkpoint has no metadata sidecar: %s', path)

    expected = vocabulary_hash()
    if metadata.get('vocabulary_hash', expected) != expected:
        log.warning('Checkpoint %s was trained on a different instruction vocabulary.', path)
    return params, metadata
