#!/usr/bin/python
# -*- coding: utf-8 -*-

import logging

from pathlib import Path

import numpy as np

from .utils import export_file

log = logging.getLogger(__name__)

CSV_HEADER = 'cell,seed,n1,n2,n3,n4,n5,avg_len,off_task_rate'
ROBUSTNESS_HEADER = 'component,aug_mode,seed,clean,corrupted,drop'


def _fixed(value):
    return '' if value is None else f'{value:.3f}'


def metrics_csv(metrics):
    lines = [CSV_HEADER]
    for m in metrics:
        values = [m.label, str(m.seed)]
        values.extend(_fixed(v) for v in m.completion)
        values.append(_fixed(m.avg_len))
        values.append(_fixed(m.off_task_rate))
        lines.append(','.join(values))
    return lines


def summarize(metrics):
    """
    Average the metrics of every cell label over its seeds.

    Returns:
        list: (label, completion tuple, avg_len, off_task_rate|None, seed count)
            in order of first appearance
    """
    groups = {}
    for m in metrics:
        groups.setdefault(m.label, []).append(m)

    rows = []
    for label, group in groups.items():
        completion = tuple(float(np.mean([m.completion[i] for m in group]))
                           for i in range(len(group[0].completion)))
        rates = [m.off_task_rate for m in group if m.off_task_rate is not None]
        off_task = float(np.mean(rates)) if rates else None
        avg_len = float(np.mean([m.avg_len for m in group]))
        rows.append((label, completion, avg_len, off_task, len(group)))
    return rows


def summary_table(metrics):
    columns = ' '.join(f'{n:>6d}' for n in range(1, 6))
    lines = [
        'Tasks completed in a row (% of chains, averaged over seeds)',
        f'{"cell":<20s} {columns} {"Avg.Len":>8s} {"OffTask":>8s} {"seeds":>6s}',
    ]
    for label, completion, avg_len, off_task, seeds in summarize(metrics):
        percents = ' '.join(f'{100 * v:>5.1f}%' for v in completion)
        off_task = 'n/a' if off_task is None else f'{off_task:.3f}'
        lines.append(f'{label:<20s} {percents} {avg_len:>8.2f} {off_task:>8s} {seeds:>6d}')
    return lines


def plot_summary(metrics, filename):
    # Import lazily: reports without charts must not need a display backend.
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    rows = summarize(metrics)
    labels = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 3.5))
    ax.bar(np.arange(len(rows)), [r[2] for r in rows], color='tab:blue')
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha='right')
    ax.set_ylim(0, 5)
    ax.set_ylabel('average chain length')
    fig.tight_layout()
    fig.savefig(filename, dpi=100)
    plt.close(fig)


def _prepare(output_dir):
    output_dir = Path(output_dir)
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RuntimeError(f'Unable to create output directory {output_dir}: {e}')
    return output_dir


def emit_report(metrics, output_dir, plot=False):
    """
    Write `metrics.csv`, `summary.txt` and optionally `summary.png`.

    Raises:
        RuntimeError: the output location is not writable
    """
    output_dir = _prepare(output_dir)
    files = [output_dir / 'metrics.csv', output_dir / 'summary.txt']
    try:
        export_file(files[0], metrics_csv(metrics))
        export_file(files[1], summary_table(metrics))
        if plot and metrics:
            files.append(output_dir / 'summary.png')
            plot_summary(metrics, files[2])
    except OSError as e:
        raise RuntimeError(f'Unable to write report to {output_dir}: {e}')

    for line in summary_table(metrics):
        log.info(line)
    log.info('Report written to: %s', ', '.join(str(f) for f in files))
    return files


def write_robustness(rows, output_dir):
    output_dir = _prepare(output_dir)
    lines = [ROBUSTNESS_HEADER]
    for row in rows:
        drop = row['clean'] - row['corrupted']
        lines.append(f'{row["component"]},{row["aug_mode"]},{row["seed"]},'
                     f'{row["clean"]:.3f},{row["corrupted"]:.3f},{drop:.3f}')

    filename = output_dir / 'robustness.csv'
    try:
        export_file(filename, lines)
    except OSError as e:
        raise RuntimeError(f'Unable to write {filename}: {e}')
    log.info('Robustness results written to: %s', filename)
    return filename
