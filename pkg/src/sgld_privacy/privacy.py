"""Membership privacy leakage (Mpl) under the Bayes-optimal attack.

The optimal attacker's belief that ``z`` was a training sample is

    P(m=1 | z, theta, S) = sigmoid(s + t_lambda),   t_lambda = log(lambda / (1 - lambda))

where ``s = t_p(z) - l(z, theta)`` is the measure score and ``lambda`` the
member ratio of the attacker's shadow dataset.  Mpl is the advantage of
that belief over the prior ``lambda``.  Because sigmoid is 1/4-Lipschitz,
``Mpl <= max(s / 4, 0)``.

Bounds are compared with an additive slack of ``BOUND_TOL``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputError, NumericError
from .net_core import LossBound, ModelParams, Sample, forward, nll_loss
from .posterior import (EnsemblePredictor, PosteriorSampleSet, ensemble_predict,
                        posterior_mean_loss, mc_estimate_tp)

BOUND_TOL = 1e-9


@dataclass
class ShadowDataset:
    entries: list
    lam: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"member ratio must lie strictly in (0, 1), got {self.lam}")

    @property
    def t_lambda(self) -> float:
        return math.log(self.lam / (1.0 - self.lam))

    @property
    def members(self) -> list[Sample]:
        return [z for z, m in self.entries if m == 1]

    @property
    def nonmembers(self) -> list[Sample]:
        return [z for z, m in self.entries if m == 0]


def _lam(shadow_or_lambda) -> float:
    lam = shadow_or_lambda.lam if isinstance(shadow_or_lambda, ShadowDataset) else float(shadow_or_lambda)
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"member ratio must lie strictly in (0, 1), got {lam}")
    return lam


def measure_score(t_p, loss):
    return np.subtract(t_p, loss)


def membership_posterior(s, shadow_or_lambda):
    """Optimal attacker's membership probability for measure score ``s``."""
    lam = _lam(shadow_or_lambda)
    return expit(np.add(s, math.log(lam / (1.0 - lam))))


def mpl_loss(P, lam: float):
    return np.maximum(np.subtract(P, lam), 0.0)


def mpl_lipschitz_bound(s):
    return np.maximum(np.divide(s, 4.0), 0.0)


def ensemble_measure_score(mean_loss, ensemble_loss):
    """Score of an averaged-output predictor: E_{p_S}[l] minus the loss of the averaged prediction."""
    return np.subtract(mean_loss, ensemble_loss)


def uniform_mpl_bound(B: float, total_step: float, sum_sq: float = 0.0,
                      c_approx: float = 0.0) -> float:
    """Uniform bound on the expected Mpl of an SGLD ensemble.

    ``B/4 * (exp(2B) - 1)`` plus ``c_approx * (1 + sum_sq) / total_step``;
    the second term's constant is not known analytically and must be
    supplied (0 keeps only the leading term).
    """
    if not B > 0:
        raise ConfigError("B must be positive")
    if not total_step > 0:
        raise ConfigError("sum of step sizes must be positive")
    if c_approx < 0:
        raise ConfigError("c_approx must be non-negative")
    return B / 4.0 * math.expm1(2.0 * B) + c_approx * (1.0 / total_step + sum_sq / total_step)


def loo_error_bound(B: float) -> float:
    """Bound ``B (exp(2B) - 1)`` on the leave-one-out change of the posterior mean loss."""
    if not B > 0:
        raise ConfigError("B must be positive")
    return B * math.expm1(2.0 * B)


def dp_mpl_bound(epsilon: float) -> float:
    """Mpl bound ``epsilon / 4`` for an (epsilon, delta)-DP model, holding w.p. 1 - delta."""
    if epsilon < 0:
        raise ConfigError("epsilon must be non-negative")
    return epsilon / 4.0


@dataclass
class DiscretePosterior:
    support: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.support) != self.weights.shape[0]:
            raise InputError("one weight per support point required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InputError("weights must be non-negative and sum to 1")


def default_loss_fn(bound: LossBound) -> Callable:
    def loss(z: Sample, theta: ModelParams) -> float:
        return nll_loss(forward(theta, z.x), z.y, bound)
    return loss


def exact_posterior(support: Sequence, prior_weights, dataset: Sequence[Sample],
                    loss_fn: Callable) -> DiscretePosterior:
    """Bayes update over a finite support: ``w_i ~ prior_i * exp(-sum_z l(z, theta_i))``."""
    prior = np.asarray(prior_weights, dtype=np.float64)
    if len(support) != prior.shape[0]:
        raise InputError("one prior weight per support point required")
    with np.errstate(divide="ignore"):
        logw = np.log(prior)
    for z in dataset:
        logw = logw - np.array([loss_fn(z, th) for th in support])
    if not np.any(np.isfinite(logw)):
        raise NumericError("posterior has zero total weight")
    logw = logw - logw.max()
    w = np.exp(logw)
    total = w.sum()
    if not total > 0 or not math.isfinite(total):
        raise NumericError("posterior has zero total weight")
    return DiscretePosterior(list(support), w / total)


@dataclass(frozen=True)
class LooCheck:
    loo_error: float
    bound: float
    holds: bool


def exact_loo_check(posterior_D: DiscretePosterior, posterior_S: DiscretePosterior, z: Sample,
                    bound: LossBound | float = LossBound(), loss_fn: Callable | None = None) -> LooCheck:
    """Compare the posterior mean loss of ``z`` under D and under D minus one sample.

    ``bound`` may be a plain number when ``loss_fn`` is supplied, which
    allows loss bounds below ``log 2`` that a clamped NLL cannot reach.
    """
    if len(posterior_D.support) != len(posterior_S.support):
        raise InputError("posteriors must share one support")
    if not isinstance(bound, LossBound) and loss_fn is None:
        raise InputError("a numeric bound needs an explicit loss_fn")
    B = bound.B if isinstance(bound, LossBound) else float(bound)
    loss_fn = loss_fn or default_loss_fn(bound)
    losses = np.array([loss_fn(z, th) for th in posterior_D.support])
    err = abs(float(posterior_S.weights @ losses - posterior_D.weights @ losses))
    b = loo_error_bound(B)
    return LooCheck(err, b, err <= b + BOUND_TOL)


@dataclass
class MplReport:
    sample_id: str
    score: float
    posterior: float
    mpl: float
    bound: float
    member: int = -1


def audit_samples(sample_set: PosteriorSampleSet, X, y, lam: float = 0.5,
                  bound: LossBound = LossBound(), ensemble: EnsemblePredictor | None = None,
                  ids: Sequence[str] | None = None, membership=None) -> list[MplReport]:
    """Per-sample Mpl reports.

    With ``ensemble`` the averaged-output score (posterior mean loss minus
    the ensemble's loss) is used; otherwise the single-model score of the
    final snapshot, ``t_p - l``.  The posterior expectations are estimated
    from ``sample_set``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(y)
    if ensemble is not None:
        own = nll_loss(ensemble_predict(ensemble, X), y, bound)
        s = ensemble_measure_score(posterior_mean_loss(sample_set, (X, y), bound), own)
    else:
        own = nll_loss(forward(sample_set.snapshots[-1], X), y, bound)
        s = measure_score(mc_estimate_tp(sample_set, (X, y), bound), own)
    P = membership_posterior(s, lam)
    mpl = mpl_loss(P, lam)
    lip = mpl_lipschitz_bound(s)
    ids = list(ids) if ids is not None else [str(i) for i in range(len(y))]
    member = np.full(len(y), -1) if membership is None else np.asarray(membership)
    return [MplReport(ids[i], float(s[i]), float(P[i]), float(mpl[i]), float(lip[i]), int(member[i]))
            for i in range(len(y))]


MPL_COLUMNS = ("sample_id", "score", "posterior", "mpl", "bound", "member")


def write_mpl_reports(reports: Sequence[MplReport], path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MPL_COLUMNS)
    for r in reports:
        d = asdict(r)
        w.writerow([d["sample_id"]] + [repr(d[c]) for c in MPL_COLUMNS[1:5]] + [d["member"]])
    Path(path).write_text(buf.getvalue())


def read_mpl_reports(path) -> list[MplReport]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [MplReport(r["sample_id"], float(r["score"]), float(r["posterior"]), float(r["mpl"]),
                      float(r["bound"]), int(r["member"])) for r in rows]
