"""Minibatch training loop shared by every strategy."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .net_core import LossBound, ModelParams
from .optimizers import OptimizerState, step
from .posterior import TrainingRun


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def train(params: ModelParams, X: np.ndarray, y: np.ndarray, state: OptimizerState,
          batch_size: int, epochs: int, order_seed: int, record_from: int = 0,
          bound: LossBound = LossBound()) -> TrainingRun:
    """Run ``epochs`` passes of shuffled minibatches and record the trajectory.

    The shuffling stream (``order_seed``) is independent of the optimizer's
    noise stream.  Dropout masks come from a third stream derived from the
    optimizer's noise seed.  Snapshots are stored from update ``record_from``.
    """
    N = len(y)
    if batch_size < 1 or epochs < 1:
        raise ConfigError("batch_size and epochs must be >= 1")
    if N < 1:
        raise ConfigError("empty training set")
    order_rng = np.random.default_rng(order_seed)
    dropout_rng = np.random.default_rng([state.noise_seed, 1])
    use_dropout = params.architecture.has_dropout
    total = epochs * steps_per_epoch(N, batch_size)
    run = TrainingRun(params.architecture, record_from=min(record_from, total - 1), total_steps=total)

    t = 0
    for _ in range(epochs):
        perm = order_rng.permutation(N)
        for start in range(0, N, batch_size):
            idx = perm[start:start + batch_size]
            seed = int(dropout_rng.integers(2 ** 63)) if use_dropout else None
            params = step(params, state, X[idx], y[idx], N, dropout_seed=seed, bound=bound)
            if t >= run.record_from:
                run.record(params.theta, state.last_step_size)
            t += 1
    return run
