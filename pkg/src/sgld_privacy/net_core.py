"""Fully-connected classifiers with a hand-derived backward pass.

Parameters live in one flat vector ``theta`` so that optimizers and
posterior snapshots can treat a network as a point in R^d.  The layout is
fixed: layer by layer, the weight matrix of shape ``(fan_in, fan_out)`` in
row-major order followed by the bias vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, InputError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpArchitecture:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    dropout_rate: float | tuple[float, ...] = 0.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigError("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ConfigError("output layer must have at least 2 classes")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        n_hidden = len(sizes) - 2
        rate = self.dropout_rate
        rates = (float(rate),) * n_hidden if np.isscalar(rate) else tuple(float(r) for r in rate)
        if len(rates) != n_hidden:
            raise ConfigError(f"expected {n_hidden} dropout rates, got {len(rates)}")
        if any(not 0.0 <= r < 1.0 for r in rates):
            raise ConfigError(f"dropout rates must lie in [0, 1), got {rates}")
        object.__setattr__(self, "dropout_rate", rates)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    @property
    def has_dropout(self) -> bool:
        return any(r > 0 for r in self.dropout_rate)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "dropout_rate": list(self.dropout_rate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArchitecture":
        return cls(tuple(d["layer_sizes"]), d.get("activation", "relu"),
                   tuple(d.get("dropout_rate", ())) or 0.0)


@dataclass
class ModelParams:
    architecture: MlpArchitecture
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.architecture.n_params,):
            raise ShapeError(
                f"theta has shape {self.theta.shape}, architecture needs "
                f"({self.architecture.n_params},)")
        if not np.all(np.isfinite(self.theta)):
            raise NumericError("theta contains non-finite entries")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Return (W, b) views into ``theta`` for every layer."""
        out = []
        offset = 0
        for fan_in, fan_out in self.architecture.layer_shapes:
            W = self.theta[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.theta[offset:offset + fan_out]
            offset += fan_out
            out.append((W, b))
        return out

    def with_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(self.architecture, theta)


class Sample(NamedTuple):
    x: np.ndarray
    y: int


def stack_samples(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        raise InputError("empty batch")
    X = np.stack([np.asarray(s.x, dtype=np.float64) for s in samples])
    y = np.asarray([int(s.y) for s in samples], dtype=np.int64)
    return X, y


@dataclass(frozen=True)
class LossBound:
    """Uniform bound ``B`` on the per-sample negative log-likelihood.

    Probabilities are clipped to ``[exp(-B), 1 - exp(-B) * (k - 1)]`` before
    taking logs, which keeps every loss inside ``[0, B]``.
    """

    B: float = 5.0

    def __post_init__(self):
        if not self.B > 0 or not math.isfinite(self.B):
            raise ConfigError(f"loss bound must be positive and finite, got {self.B}")
        if self.p_min >= 0.5:
            raise ConfigError(f"B = {self.B} gives p_min >= 0.5; need B > log 2")

    @property
    def p_min(self) -> float:
        return math.exp(-self.B)

    def p_max(self, n_classes: int) -> float:
        hi = 1.0 - self.p_min * (n_classes - 1)
        if hi <= self.p_min:
            raise ConfigError(f"B = {self.B} is too small for {n_classes} classes")
        return hi

    def clamp_probs(self, probs: np.ndarray) -> np.ndarray:
        """Raise entries below ``p_min`` to ``p_min`` and rescale the rest to sum to 1.

        Rescaling can push further entries under ``p_min``; those are pinned
        too, which takes at most ``k`` rounds.  Every output entry lies in
        ``[p_min, p_max(k)]``.
        """
        probs = np.asarray(probs, dtype=np.float64)
        k = probs.shape[-1]
        self.p_max(k)
        P = np.atleast_2d(probs)
        pinned = np.zeros(P.shape, dtype=bool)
        out = P.copy()
        for _ in range(k):
            pinned |= out < self.p_min
            free_mass = np.where(pinned, 0.0, P).sum(axis=1, keepdims=True)
            target = 1.0 - self.p_min * pinned.sum(axis=1, keepdims=True)
            out = np.where(pinned, self.p_min, P * target / free_mass)
            if not np.any(~pinned & (out < self.p_min)):
                break
        return out.reshape(probs.shape)


def init_params(architecture: MlpArchitecture, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in architecture.layer_shapes:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelParams(architecture, np.concatenate(chunks))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_mode(mode: str, architecture: MlpArchitecture, seed) -> bool:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    use_dropout = mode == "train" and architecture.has_dropout
    if use_dropout and seed is None:
        raise ConfigError("train-mode forward with dropout needs a seed")
    return use_dropout


def forward_trace(params: ModelParams, X: np.ndarray, mode: str = "eval",
                  dropout_seed: int | None = None) -> dict:
    """Run the network on a 2-D batch and keep every intermediate.

    Returns a dict with ``pre`` (pre-activations per layer, the last being
    the logits), ``post`` (layer inputs, starting with ``X``), ``masks``
    (scaled dropout masks per hidden layer or None) and ``probs``.
    """
    arch = params.architecture
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != arch.n_inputs:
        raise ShapeError(f"expected inputs of shape (n, {arch.n_inputs}), got {X.shape}")
    use_dropout = _check_mode(mode, arch, dropout_seed)
    rng = np.random.default_rng(dropout_seed) if use_dropout else None

    layers = params.layers()
    pre, post, masks = [], [X], []
    h = X
    for i, (W, b) in enumerate(layers):
        # Overflow surfaces as a NumericError on the logits below.
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ W + b
        pre.append(z)
        if i == len(layers) - 1:
            break
        a = _activate(z, arch.activation)
        rate = arch.dropout_rate[i]
        if use_dropout and rate > 0:
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        else:
            mask = None
        masks.append(mask)
        post.append(a)
        h = a
    logits = pre[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    return {"pre": pre, "post": post, "masks": masks, "probs": softmax(logits)}


def forward(params: ModelParams, x: np.ndarray, mode: str = "eval",
            dropout_seed: int | None = None) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of them."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    probs = forward_trace(params, x[None, :] if single else x, mode, dropout_seed)["probs"]
    return probs[0] if single else probs


def nll_loss(probs: np.ndarray, y, bound: LossBound = LossBound()) -> np.ndarray | float:
    """Clipped negative log-likelihood of label ``y``.

    Works on a single probability vector or row-wise on a batch.
    """
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    P = probs[None, :] if single else probs
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    k = P.shape[1]
    if y.shape[0] != P.shape[0]:
        raise ShapeError(f"{P.shape[0]} probability rows but {y.shape[0]} labels")
    if np.any(y < 0) or np.any(y >= k):
        raise IndexError(f"label out of range for {k} classes")
    p_true = P[np.arange(P.shape[0]), y]
    loss = -np.log(np.clip(p_true, bound.p_min, bound.p_max(k)))
    return float(loss[0]) if single else loss


def backward(params: ModelParams, X: np.ndarray, y: np.ndarray, mode: str = "eval",
             seed: int | None = None, bound: LossBound = LossBound()) -> np.ndarray:
    """Gradient of the summed clipped NLL over the batch w.r.t. ``theta``.

    Where the true-class probability is clipped the loss is flat, so those
    rows contribute zero gradient.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("backward needs a nonempty 2-D batch")
    arch = params.architecture
    trace = forward_trace(params, X, mode, seed)
    probs = trace["probs"]
    n, k = probs.shape
    if np.any(y < 0) or np.any(y >= k):
        raise IndexError(f"label out of range for {k} classes")
    rows = np.arange(n)
    p_true = probs[rows, y]
    active = (p_true > bound.p_min) & (p_true < bound.p_max(k))

    delta = probs.copy()
    delta[rows, y] -= 1.0
    delta[~active] = 0.0

    layers = params.layers()
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = trace["post"][i]
        grads.append((h_in.T @ delta, delta.sum(axis=0)))
        if i == 0:
            break
        g = delta @ W.T
        mask = trace["masks"][i - 1]
        if mask is not None:
            g = g * mask
        z = trace["pre"][i - 1]
        a = _activate(z, arch.activation)
        delta = g * _activate_grad(z, a, arch.activation)

    flat = np.concatenate([part.ravel() for gW, gb in reversed(grads) for part in (gW, gb)])
    if not np.all(np.isfinite(flat)):
        raise NumericError("non-finite gradient")
    return flat


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return np.argmax(forward(params, X), axis=-1)
