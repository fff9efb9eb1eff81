"""Corpus-level orchestration: traces to windows to checkpoints to scores.

Thin glue over the other modules so the CLI and the test suite run the same
code paths. Normalization statistics are always fitted on the training
traces only and travel inside the checkpoint.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .assess import residual_batch, roc_auc, RocResult
from .preprocess import make_cycle_windows, make_point_windows, stack_windows
from .traces import DataError, NormStats, SignalTrace, apply_norm, fit_norm
from .training import Checkpoint, TrainConfig, train


def corpus_windows(
    traces: list[SignalTrace],
    config: TrainConfig,
    stride: int,
    norm_stats: NormStats | None,
    n_future: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Window every trace and stack the results.

    n_future overrides the config's future length (0 gives input-only
    windows, the cheap form for residual evaluation). Traces too short to
    yield a single window are skipped; an entirely empty result is an error.
    """
    p = config.n_future if n_future is None else n_future
    windows = []
    for trace in traces:
        work = apply_norm(trace, norm_stats) if norm_stats else trace
        try:
            if config.mode == "point":
                windows.extend(
                    make_point_windows(work, config.n_input, p, stride=stride)
                )
            else:
                windows.extend(
                    make_cycle_windows(
                        work, config.n_input, p, dim=config.data_dim, stride=stride
                    )
                )
        except DataError:
            continue  # trace shorter than one window, or no usable cycles
    if not windows:
        raise DataError("no windows could be extracted from the corpus")
    return stack_windows(windows)


def train_corpus(
    traces: list[SignalTrace],
    config: TrainConfig,
    stride: int = 1,
    n_workers: int = 1,
    progress=None,
) -> Checkpoint:
    """Fit normalization on the given traces, window them, and train."""
    stats = fit_norm(traces)
    config = replace(config, stride=stride)
    inputs, futures, labels = corpus_windows(traces, config, stride, stats)
    return train(
        inputs, futures, labels, config,
        norm_stats=stats, n_workers=n_workers, progress=progress,
    )


def corpus_residuals(
    checkpoint: Checkpoint,
    traces: list[SignalTrace],
    stride: int = 1,
    n_workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Residuals and window labels over a corpus, input-only windows."""
    cfg = checkpoint.train_config
    inputs, _, labels = corpus_windows(
        traces, cfg, stride, checkpoint.norm_stats, n_future=0
    )
    res = residual_batch(checkpoint.params, inputs, norm=cfg.norm, n_workers=n_workers)
    return res, labels


def corpus_roc(
    checkpoint: Checkpoint,
    traces: list[SignalTrace],
    stride: int = 1,
    n_workers: int = 1,
) -> tuple[RocResult, np.ndarray, np.ndarray]:
    """ROC/AUC of the checkpoint over labeled traces."""
    res, labels = corpus_residuals(checkpoint, traces, stride, n_workers)
    return roc_auc(res, labels), res, labels
