"""Posterior snapshots, step-size weighted ensembles and Monte-Carlo estimates.

A :class:`PosteriorSampleSet` holds the parameter vectors visited after
burn-in together with the step size used to reach each of them.  Snapshot
``t`` is weighted by ``eps_t / S_L`` where ``S_L`` is the sum of retained
step sizes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, InputError, ParseError, StateError
from .net_core import LossBound, MlpArchitecture, ModelParams, forward, nll_loss

SNAPSHOT_MAGIC = b"SGLDSNAP"
SNAPSHOT_VERSION = 1


@dataclass
class TrainingRun:
    """Trajectory recorded by the trainer.

    ``thetas[i]`` is the parameter vector after update ``record_from + i``
    and ``step_sizes[i]`` the step size of that update.
    """

    architecture: MlpArchitecture
    thetas: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    record_from: int = 0
    total_steps: int = 0

    def record(self, theta: np.ndarray, step_size: float) -> None:
        self.thetas.append(np.array(theta, dtype=np.float64))
        self.step_sizes.append(float(step_size))

    @property
    def final(self) -> ModelParams:
        return ModelParams(self.architecture, self.thetas[-1])


@dataclass
class PosteriorSampleSet:
    architecture: MlpArchitecture
    thetas: np.ndarray
    step_sizes: np.ndarray
    burn_in_start: int = 0
    thinning: int = 1

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        self.step_sizes = np.asarray(self.step_sizes, dtype=np.float64).ravel()
        if self.thetas.shape[0] < 1:
            raise StateError("a sample set needs at least one snapshot")
        if self.thetas.shape[0] != self.step_sizes.shape[0]:
            raise StateError("snapshot and step-size counts differ")
        if self.thetas.shape[1] != self.architecture.n_params:
            raise StateError("snapshot length does not match the architecture")
        if np.any(self.step_sizes <= 0):
            raise StateError("step sizes must be positive")

    @classmethod
    def from_params(cls, snapshots: Sequence[ModelParams], step_sizes, **kw) -> "PosteriorSampleSet":
        if not snapshots:
            raise StateError("no snapshots")
        arch = snapshots[0].architecture
        if any(s.architecture != arch for s in snapshots):
            raise StateError("snapshots do not share one architecture")
        return cls(arch, np.stack([s.theta for s in snapshots]), step_sizes, **kw)

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def total_step(self) -> float:
        """S_L, the sum of retained step sizes."""
        return float(self.step_sizes.sum())

    @property
    def sum_sq_steps(self) -> float:
        return float((self.step_sizes ** 2).sum())

    @property
    def weights(self) -> np.ndarray:
        return self.step_sizes / self.step_sizes.sum()

    @property
    def snapshots(self) -> list[ModelParams]:
        return [ModelParams(self.architecture, th) for th in self.thetas]

    def last(self, k: int) -> "PosteriorSampleSet":
        if not 1 <= k <= len(self):
            raise ConfigError(f"cannot take the last {k} of {len(self)} snapshots")
        return PosteriorSampleSet(self.architecture, self.thetas[-k:], self.step_sizes[-k:],
                                  self.burn_in_start, self.thinning)


def collect(run: TrainingRun, burn_in: int, thinning: int = 1) -> PosteriorSampleSet:
    """Keep every ``thinning``-th snapshot from step ``burn_in`` on.

    Thinning is aligned to the end of the run so the final iterate is
    always retained.
    """
    total = run.record_from + len(run.thetas)
    if thinning < 1:
        raise ConfigError("thinning must be >= 1")
    if burn_in >= total:
        raise ConfigError(f"burn-in {burn_in} is not below the {total} recorded steps")
    if burn_in < run.record_from:
        raise ConfigError(f"run only recorded steps from {run.record_from}, burn-in is {burn_in}")
    keep = [i for i in range(burn_in, total) if (total - 1 - i) % thinning == 0]
    idx = [i - run.record_from for i in keep]
    return PosteriorSampleSet(run.architecture,
                              np.stack([run.thetas[i] for i in idx]),
                              np.asarray([run.step_sizes[i] for i in idx]),
                              burn_in_start=burn_in, thinning=thinning)


@dataclass
class EnsemblePredictor:
    sample_set: PosteriorSampleSet
    mode: str = "weighted_all"
    k: int = 3

    def __post_init__(self):
        if self.mode not in ("weighted_all", "last_k"):
            raise ConfigError(f"unknown ensemble mode {self.mode!r}")
        if self.mode == "last_k" and not 1 <= self.k <= len(self.sample_set):
            raise ConfigError(f"last_k needs 1 <= k <= {len(self.sample_set)}, got {self.k}")

    def predict_proba(self, X) -> np.ndarray:
        return ensemble_predict(self, X)

    def __call__(self, X) -> np.ndarray:
        return ensemble_predict(self, X)


def ensemble_predict(pred: EnsemblePredictor, x) -> np.ndarray:
    """Weighted average of the snapshots' class probabilities.

    ``weighted_all`` uses the step-size weights over all snapshots,
    ``last_k`` a plain average over the final ``k``.
    """
    ss = pred.sample_set
    if pred.mode == "last_k":
        thetas = ss.thetas[-pred.k:]
        w = np.full(len(thetas), 1.0 / len(thetas))
    else:
        thetas, w = ss.thetas, ss.weights
    out = None
    for wi, th in zip(w, thetas):
        p = wi * forward(ModelParams(ss.architecture, th), x)
        out = p if out is None else out + p
    return out / out.sum(axis=-1, keepdims=True)


def snapshot_losses(sample_set: PosteriorSampleSet, X, y, bound: LossBound = LossBound()) -> np.ndarray:
    """Loss matrix of shape (snapshots, samples)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(y)
    return np.stack([nll_loss(forward(p, X), y, bound) for p in sample_set.snapshots])


def weighted_log_mean_exp_neg(losses: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``-log sum_t w_t exp(-losses[t])`` along axis 0, computed stably."""
    losses = np.asarray(losses, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if losses.shape[0] != weights.shape[0]:
        raise InputError("one weight per snapshot required")
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, rtol=0, atol=1e-12):
        raise InputError("weights must be a probability vector")
    w = weights.reshape((-1,) + (1,) * (losses.ndim - 1))
    return -logsumexp(-losses, axis=0, b=w)


def _as_batch(z):
    x, y = z
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return (x[None, :] if single else x), np.atleast_1d(y), single


def mc_estimate_tp(sample_set: PosteriorSampleSet, z, bound: LossBound = LossBound()):
    """Posterior log-mean-exp loss threshold for a sample ``z = (x, y)``.

    ``x``/``y`` may also be a batch, giving one value per row.  The result
    is clipped into ``[min_t l, max_t l]`` to absorb rounding.
    """
    X, y, single = _as_batch(z)
    L = snapshot_losses(sample_set, X, y, bound)
    tp = np.clip(weighted_log_mean_exp_neg(L, sample_set.weights), L.min(axis=0), L.max(axis=0))
    return float(tp[0]) if single else tp


def posterior_mean_loss(sample_set: PosteriorSampleSet, z, bound: LossBound = LossBound()):
    """Weighted mean snapshot loss, clipped into ``[min_t l, max_t l]`` like ``mc_estimate_tp``."""
    X, y, single = _as_batch(z)
    L = snapshot_losses(sample_set, X, y, bound)
    mean = np.clip(sample_set.weights @ L, L.min(axis=0), L.max(axis=0))
    return float(mean[0]) if single else mean


def save_snapshots(sample_set: PosteriorSampleSet, path) -> None:
    """Binary layout: magic, u32 version, u32 header length, JSON header,
    float64 step sizes, float64 snapshot matrix (row-major, little endian)."""
    header = json.dumps({
        "architecture": sample_set.architecture.to_dict(),
        "count": len(sample_set),
        "n_params": sample_set.architecture.n_params,
        "burn_in_start": sample_set.burn_in_start,
        "thinning": sample_set.thinning,
    }, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<II", SNAPSHOT_VERSION, len(header)))
        f.write(header)
        f.write(sample_set.step_sizes.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(sample_set.thetas).astype("<f8").tobytes())
    tmp.replace(path)


def load_snapshots(path) -> PosteriorSampleSet:
    data = Path(path).read_bytes()
    if not data.startswith(SNAPSHOT_MAGIC):
        raise ParseError(f"{path}: not a snapshot file")
    off = len(SNAPSHOT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != SNAPSHOT_VERSION:
        raise ParseError(f"{path}: unsupported snapshot version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    m, d = header["count"], header["n_params"]
    expected = off + 8 * (m + m * d)
    if len(data) != expected:
        raise ParseError(f"{path}: truncated or oversized snapshot file")
    steps = np.frombuffer(data, "<f8", m, off).astype(np.float64)
    thetas = np.frombuffer(data, "<f8", m * d, off + 8 * m).astype(np.float64).reshape(m, d)
    return PosteriorSampleSet(MlpArchitecture.from_dict(header["architecture"]), thetas, steps,
                              header["burn_in_start"], header["thinning"])
