"""SGD, RMSprop, SGLD and preconditioned SGLD on flat parameter vectors.

Each optimizer is an :class:`OptimizerState` plus a pair of functions: an
``*_update`` that applies the rule to a raw ``theta``/gradient pair (usable
for any differentiable target, e.g. the conjugate toy models in the tests)
and a ``*_step`` that computes the minibatch gradient of a network first.

SGLD and pSGLD descend the scaled posterior potential

    U(theta) = theta . theta / (2 sigma^2) + (N / |B|) * sum_batch l(z, theta)

and inject Gaussian noise with variance equal to the step size.  SGD and
RMSprop by default descend the same rescaled data term, without prior or
noise, so one learning rate means the same thing across the family;
``data_scaling="mean"`` switches them to the mean minibatch NLL instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ScheduleError
from .net_core import LossBound, ModelParams, backward

KINDS = ("sgd", "rmsprop", "sgld", "psgld")


@dataclass
class StepSchedule:
    """Step size as a function of the 0-based update index ``t``.

    * ``constant``: ``lr``
    * ``halving``: ``lr * 0.5 ** (t // (period * steps_per_epoch))``
    * ``polynomial``: ``lr * (b + t) ** -gamma``
    """

    kind: str = "constant"
    lr: float = 1e-3
    period: int = 5
    steps_per_epoch: int = 1
    b: float = 1.0
    gamma: float = 0.55

    def __post_init__(self):
        if self.kind not in ("constant", "halving", "polynomial"):
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if not self.lr > 0:
            raise ScheduleError(f"lr must be positive, got {self.lr}")
        if self.kind == "halving" and (self.period < 1 or self.steps_per_epoch < 1):
            raise ScheduleError("halving period and steps_per_epoch must be >= 1")
        if self.kind == "polynomial" and not (self.b > 0 and self.gamma >= 0):
            raise ScheduleError("polynomial schedule needs b > 0 and gamma >= 0")

    def step_size(self, t: int) -> float:
        if self.kind == "constant":
            return self.lr
        if self.kind == "halving":
            return self.lr * 0.5 ** (t // (self.period * self.steps_per_epoch))
        return self.lr * (self.b + t) ** (-self.gamma)

    def step_sizes(self, n: int, start: int = 0) -> np.ndarray:
        return np.array([self.step_size(t) for t in range(start, start + n)])


@dataclass(frozen=True)
class GaussianPrior:
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigError(f"prior variance must be positive, got {self.variance}")

    def neg_log_grad(self, theta: np.ndarray) -> np.ndarray:
        return theta / self.variance


@dataclass
class OptimizerState:
    kind: str
    schedule: StepSchedule = field(default_factory=StepSchedule)
    prior: GaussianPrior | None = None
    alpha: float = 0.99
    damping: float = 1e-5
    noise_seed: int = 0
    data_scaling: str = "dataset"
    t: int = 0
    v: np.ndarray | None = None
    # Test hooks: scale the injected noise, or keep the accumulator fixed.
    noise_scale: float = 1.0
    freeze_accumulator: bool = False
    last_step_size: float | None = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if self.kind in ("sgld", "psgld") and self.prior is None:
            self.prior = GaussianPrior()
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.data_scaling not in ("dataset", "mean"):
            raise ConfigError(f"data_scaling must be 'dataset' or 'mean', got {self.data_scaling!r}")
        if not self.damping > 0:
            raise ConfigError(f"damping must be positive, got {self.damping}")
        self.rng = np.random.default_rng(self.noise_seed)

    @property
    def is_langevin(self) -> bool:
        return self.kind in ("sgld", "psgld")


def _check_kind(state: OptimizerState, *kinds: str) -> None:
    if state.kind not in kinds:
        raise ConfigError(f"optimizer state is {state.kind!r}, expected one of {kinds}")


def _check_grad(grad: np.ndarray) -> np.ndarray:
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; step rejected")
    return grad


def _accumulate(state: OptimizerState, grad: np.ndarray) -> np.ndarray:
    v = np.zeros_like(grad) if state.v is None else state.v
    if v.shape != grad.shape:
        raise ConfigError(f"accumulator shape {v.shape} does not match gradient {grad.shape}")
    if not state.freeze_accumulator:
        v = state.alpha * v + (1.0 - state.alpha) * grad * grad
    return v


def minibatch_loss_grad(params: ModelParams, X, y, N: int, prior: GaussianPrior,
                        mode: str = "eval", seed: int | None = None,
                        bound: LossBound = LossBound()) -> np.ndarray:
    """Gradient of the prior term plus the N/|B|-rescaled batch NLL."""
    n = len(y)
    if n == 0:
        raise ConfigError("empty minibatch")
    if N < n:
        raise ConfigError(f"dataset size {N} is smaller than the batch ({n})")
    data = backward(params, X, y, mode=mode, seed=seed, bound=bound)
    return prior.neg_log_grad(params.theta) + (N / n) * data


def data_loss_grad(params: ModelParams, X, y, N: int | None = None, mode: str = "eval",
                   seed: int | None = None, bound: LossBound = LossBound()) -> np.ndarray:
    """Gradient of ``(N / |B|) * sum_batch l``; with ``N=None`` the batch mean."""
    n = len(y)
    if n == 0:
        raise ConfigError("empty minibatch")
    if N is not None and N < n:
        raise ConfigError(f"dataset size {N} is smaller than the batch ({n})")
    scale = (N if N is not None else 1) / n
    return scale * backward(params, X, y, mode=mode, seed=seed, bound=bound)


def sgd_update(theta: np.ndarray, grad: np.ndarray, state: OptimizerState) -> np.ndarray:
    _check_kind(state, "sgd")
    grad = _check_grad(grad)
    eps = state.schedule.step_size(state.t)
    state.last_step_size = eps
    state.t += 1
    return theta - eps * grad


def rmsprop_update(theta: np.ndarray, grad: np.ndarray, state: OptimizerState) -> np.ndarray:
    _check_kind(state, "rmsprop")
    grad = _check_grad(grad)
    eps = state.schedule.step_size(state.t)
    state.v = _accumulate(state, grad)
    state.last_step_size = eps
    state.t += 1
    return theta - eps * grad / (np.sqrt(state.v) + state.damping)


def sgld_update(theta: np.ndarray, grad: np.ndarray, state: OptimizerState) -> np.ndarray:
    """One Langevin step given the gradient of the potential ``U``."""
    _check_kind(state, "sgld")
    grad = _check_grad(grad)
    eps = state.schedule.step_size(state.t)
    noise = state.rng.standard_normal(np.shape(theta)) * (state.noise_scale * math.sqrt(eps))
    state.last_step_size = eps
    state.t += 1
    return theta - (eps / 2.0 * grad + noise)


def psgld_update(theta: np.ndarray, grad: np.ndarray, state: OptimizerState) -> np.ndarray:
    """Langevin step preconditioned by ``G = 1 / (damping + sqrt(v))``.

    ``v`` is an exponential moving average of the squared potential
    gradient.  The curvature-correction term of the full sampler is dropped.
    """
    _check_kind(state, "psgld")
    grad = _check_grad(grad)
    eps = state.schedule.step_size(state.t)
    v = _accumulate(state, grad)
    G = 1.0 / (state.damping + np.sqrt(v))
    noise = state.rng.standard_normal(np.shape(theta)) * (state.noise_scale * np.sqrt(eps * G))
    state.v = v
    state.last_step_size = eps
    state.t += 1
    return theta - (eps / 2.0 * (G * grad) + noise)


_UPDATES = {"sgd": sgd_update, "rmsprop": rmsprop_update,
            "sgld": sgld_update, "psgld": psgld_update}


def update(theta: np.ndarray, grad: np.ndarray, state: OptimizerState) -> np.ndarray:
    return _UPDATES[state.kind](theta, grad, state)


def step(params: ModelParams, state: OptimizerState, X, y, N: int,
         dropout_seed: int | None = None, bound: LossBound = LossBound()) -> ModelParams:
    """Compute the right gradient for ``state.kind`` and apply one update."""
    mode = "train" if params.architecture.has_dropout else "eval"
    if state.is_langevin:
        grad = minibatch_loss_grad(params, X, y, N, state.prior, mode, dropout_seed, bound)
    else:
        scale_to = N if state.data_scaling == "dataset" else None
        grad = data_loss_grad(params, X, y, scale_to, mode, dropout_seed, bound)
    return params.with_theta(update(params.theta, grad, state))


def sgd_step(params, state, X, y, N, **kw) -> ModelParams:
    _check_kind(state, "sgd")
    return step(params, state, X, y, N, **kw)


def rmsprop_step(params, state, X, y, N, **kw) -> ModelParams:
    _check_kind(state, "rmsprop")
    return step(params, state, X, y, N, **kw)


def sgld_step(params, state, X, y, N, **kw) -> ModelParams:
    _check_kind(state, "sgld")
    return step(params, state, X, y, N, **kw)


def psgld_step(params, state, X, y, N, **kw) -> ModelParams:
    _check_kind(state, "psgld")
    return step(params, state, X, y, N, **kw)


@dataclass(frozen=True)
class ScheduleReport:
    monotone: bool
    constant: bool
    total: float
    sq_ratio: float
    horizon: int

    @property
    def decreasing(self) -> bool:
        return self.monotone and not self.constant


def validate_schedule(schedule: StepSchedule, horizon: int) -> ScheduleReport:
    """Check positivity and monotonicity over ``horizon`` steps.

    Reports the partial sum of step sizes and the ratio of the sum of
    squares to that sum, which must tend to zero for decreasing schedules.
    Constant schedules are accepted and flagged.
    """
    if horizon < 2:
        raise ScheduleError("horizon must be at least 2")
    eps = schedule.step_sizes(horizon)
    if np.any(eps <= 0) or not np.all(np.isfinite(eps)):
        raise ScheduleError("step sizes must be positive and finite")
    if np.any(np.diff(eps) > 0):
        raise ScheduleError("step sizes increase; schedules must be non-increasing")
    total = float(eps.sum())
    return ScheduleReport(monotone=True, constant=bool(np.all(eps == eps[0])),
                          total=total, sq_ratio=float((eps ** 2).sum() / total),
                          horizon=horizon)
