"""One-dimensional Gaussian-mean model with a closed-form posterior.

    theta ~ N(0, prior_var),   x_i | theta ~ N(theta, noise_var)

Used as an oracle for the Langevin samplers: the posterior is Gaussian,
so sample moments, posterior expected losses and leave-one-out posteriors
are all available exactly.  Losses drop the ``log(2 pi noise_var) / 2``
constant, which cancels in every quantity computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .optimizers import GaussianPrior, OptimizerState, StepSchedule, sgld_update
from .posterior import weighted_log_mean_exp_neg


@dataclass(frozen=True)
class GaussianMeanModel:
    data: np.ndarray
    noise_var: float = 1.0
    prior_var: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64).ravel())

    @property
    def n(self) -> int:
        return self.data.size

    @property
    def posterior_precision(self) -> float:
        return 1.0 / self.prior_var + self.n / self.noise_var

    @property
    def posterior_var(self) -> float:
        return 1.0 / self.posterior_precision

    @property
    def posterior_mean(self) -> float:
        return (self.data.sum() / self.noise_var) / self.posterior_precision

    def loss(self, x, theta):
        return (np.asarray(x) - np.asarray(theta)) ** 2 / (2.0 * self.noise_var)

    def expected_loss(self, x):
        """Posterior mean of ``loss(x, theta)``."""
        return ((np.asarray(x) - self.posterior_mean) ** 2 + self.posterior_var) / (2.0 * self.noise_var)

    def potential_grad(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return theta / self.prior_var + (self.n * theta - self.data.sum()) / self.noise_var

    def without(self, index: int) -> "GaussianMeanModel":
        return GaussianMeanModel(np.delete(self.data, index), self.noise_var, self.prior_var)

    def with_sample(self, x: float) -> "GaussianMeanModel":
        return GaussianMeanModel(np.append(self.data, x), self.noise_var, self.prior_var)


def run_sgld_chains(grad_fn: Callable, schedule: StepSchedule, theta0, n_steps: int,
                    seed: int, prior_var: float = 1.0, record_from: int = 0):
    """Run independent SGLD chains stacked in one array.

    ``grad_fn(theta)`` returns the potential gradient for every chain at
    once.  Returns ``(trajectory, step_sizes)`` for updates ``record_from``
    onwards; ``trajectory[i]`` is the state after update ``record_from + i``.
    """
    state = OptimizerState("sgld", schedule, GaussianPrior(prior_var), noise_seed=seed)
    theta = np.array(theta0, dtype=np.float64)
    traj = np.empty((n_steps - record_from,) + theta.shape)
    steps = np.empty(n_steps - record_from)
    for t in range(n_steps):
        theta = sgld_update(theta, grad_fn(theta), state)
        if t >= record_from:
            traj[t - record_from] = theta
            steps[t - record_from] = state.last_step_size
    return traj, steps


def weighted_average_loss_error(model: GaussianMeanModel, probe: float, schedule: StepSchedule,
                                horizon: int, n_chains: int, seed: int, theta0: float) -> float:
    """Mean over chains of |step-weighted trajectory loss - exact posterior loss|."""
    traj, steps = run_sgld_chains(model.potential_grad, schedule, np.full(n_chains, theta0),
                                  horizon, seed, model.prior_var)
    w = steps / steps.sum()
    l_hat = w @ model.loss(probe, traj)
    return float(np.mean(np.abs(l_hat - model.expected_loss(probe))))


@dataclass
class EnsembleMplTrial:
    """Outcome of repeated SGLD ensembles on leave-one-out toy problems.

    ``mpl`` has shape (probes, runs); ``B`` is the half-range of every loss
    value in play, i.e. the tightest uniform bound after an optimal
    constant shift of the loss.
    """

    mpl: np.ndarray
    scores: np.ndarray
    B: float
    total_step: float
    sum_sq: float

    @property
    def mean_mpl(self) -> np.ndarray:
        return self.mpl.mean(axis=1)


def ensemble_mpl_trial(base: GaussianMeanModel, probes, schedule: StepSchedule, burn_in: int,
                       horizon: int, n_runs: int, seed: int, lam: float = 0.5,
                       theta0: float = 0.0) -> EnsembleMplTrial:
    """Mpl of the averaged-output SGLD predictor when the attacker holds D minus z.

    For each probe ``z`` the sampler targets the posterior of ``base + z``
    while the attacker's reference posterior is that of ``base`` alone.
    """
    probes = np.asarray(probes, dtype=np.float64).ravel()
    n = base.n + 1
    data_sums = base.data.sum() + probes[:, None]

    def grad(theta):
        return theta / base.prior_var + (n * theta - data_sums) / base.noise_var

    traj, steps = run_sgld_chains(grad, schedule, np.full((probes.size, n_runs), theta0),
                                  burn_in + horizon, seed, base.prior_var, record_from=burn_in)
    w = steps / steps.sum()
    losses = base.loss(probes[None, :, None], traj)
    ensemble_loss = weighted_log_mean_exp_neg(losses, w)
    ref_loss = base.expected_loss(probes)[:, None]
    scores = ref_loss - ensemble_loss
    mpl = np.maximum(expit(scores + math.log(lam / (1 - lam))) - lam, 0.0)

    # Loss is convex in theta: extremes over the visited range sit at its ends.
    xs = np.concatenate([base.data, probes])
    t_lo, t_hi = traj.min(), traj.max()
    hi = float(np.maximum(base.loss(xs, t_lo), base.loss(xs, t_hi)).max())
    lo = float(base.loss(xs, np.clip(xs, t_lo, t_hi)).min())
    return EnsembleMplTrial(mpl, scores, (hi - lo) / 2.0, float(steps.sum()),
                            float((steps ** 2).sum()))
