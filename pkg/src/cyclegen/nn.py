"""Dense feedforward network engine: forward pass, MSE loss, backprop, Adam.

Weights use the row-vector convention: layer i maps an activation of width
``d[i-1]`` to width ``d[i]`` as ``a @ W + b`` with ``W`` of shape
``(d[i-1], d[i])``. Hidden layers apply the configured activation; the output
layer is linear.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")


class ShapeError(ValueError):
    """Input or target does not match the network dimensions."""


class TrainingDiverged(ArithmeticError):
    """A loss, gradient or weight became NaN/Inf during training."""

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("an architecture needs at least one weight layer")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"all widths must be >= 1, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        """Number of weight layers."""
        return len(self.widths) - 1

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]


def param_count(arch: Architecture) -> int:
    w = arch.widths
    return sum(w[i - 1] * w[i] + w[i] for i in range(1, len(w)))


@dataclass(frozen=True)
class NormStats:
    """Min/max scaling for one battery parameter."""

    min: float
    max: float

    def __post_init__(self):
        if not (np.isfinite(self.min) and np.isfinite(self.max)) or not self.max > self.min:
            raise ValueError(f"degenerate normalization stats min={self.min} max={self.max}")

    def to_dict(self) -> dict:
        return {"min": float(self.min), "max": float(self.max)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["min"]), float(d["max"]))


@dataclass
class TrainConfig:
    epochs: int = 400
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        # lr == 0 is allowed: it freezes the initialization
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


@dataclass
class ModelWeights:
    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_stats: Optional[NormStats] = None
    output_stats: Optional[NormStats] = None
    seed: int = 0
    trained_epochs: int = 0
    parameter: Optional[str] = None
    direction: Optional[str] = None

    def __post_init__(self):
        w = self.arch.widths
        if len(self.weights) != self.arch.depth or len(self.biases) != self.arch.depth:
            raise ShapeError("layer count does not match architecture")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[i], w[i + 1]) or b.shape != (w[i + 1],):
                raise ShapeError(
                    f"layer {i}: expected W{(w[i], w[i + 1])} b{(w[i + 1],)}, got W{W.shape} b{b.shape}"
                )

    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def is_finite(self) -> bool:
        return all(np.isfinite(W).all() and np.isfinite(b).all() for W, b in zip(self.weights, self.biases))

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.arch,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.input_stats,
            self.output_stats,
            self.seed,
            self.trained_epochs,
            self.parameter,
            self.direction,
        )

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def init_weights(arch: Architecture, seed: int) -> ModelWeights:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelWeights(arch, weights, biases, seed=seed)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - a * a


def _as_batch(model: ModelWeights, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.arch.d_in:
        raise ShapeError(f"expected input of length {model.arch.d_in}, got shape {x.shape}")
    return x, single


def forward(model: ModelWeights, x) -> np.ndarray:
    """Evaluate the network on one vector or a batch of row vectors."""
    a, single = _as_batch(model, x)
    last = model.arch.depth - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        a = z if i == last else _act(z, model.arch.activation)
    return a[0] if single else a


def loss_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ShapeError("empty vectors")
    d = pred - target
    return float(np.mean(d * d))


def backward(model: ModelWeights, x, target) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Loss and exact gradients of the mean squared error over all outputs.

    Accepts a single pair or a batch; the loss averages over every element,
    so gradients of a batch are the mean of per-example gradients.
    """
    x, _ = _as_batch(model, x)
    t = np.asarray(target, dtype=float).reshape(x.shape[0], -1)
    if t.shape[1] != model.arch.d_out:
        raise ShapeError(f"expected target of length {model.arch.d_out}, got {t.shape[1]}")

    kind = model.arch.activation
    last = model.arch.depth - 1
    acts, pre = [x], []
    a = x
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        a = z if i == last else _act(z, kind)
        pre.append(z)
        acts.append(a)

    diff = acts[-1] - t
    loss = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size

    gW = [np.empty(0)] * model.arch.depth
    gb = [np.empty(0)] * model.arch.depth
    for i in range(last, -1, -1):
        gW[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * _act_grad(pre[i - 1], acts[i], kind)
    return loss, gW, gb


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_update(params: list[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam step applied in place to ``params``."""
    for g in grads:
        if not np.isfinite(g).all():
            raise TrainingDiverged("non-finite gradient")
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)


def adam_step(model: ModelWeights, grads: tuple[list, list], state: AdamState, cfg: TrainConfig) -> ModelWeights:
    """Apply Adam to a copy of ``model``; ``state`` is advanced in place."""
    gW, gb = grads
    new = model.copy()
    params = new.weights + new.biases
    adam_update(params, list(gW) + list(gb), state, cfg)
    return new


@dataclass
class TrainResult:
    model: ModelWeights
    history: list[float] = field(default_factory=list)


def train(
    arch: Architecture,
    inputs,
    targets,
    cfg: TrainConfig,
    input_stats: Optional[NormStats] = None,
    output_stats: Optional[NormStats] = None,
) -> TrainResult:
    """Minibatch Adam on row-stacked ``inputs``/``targets``.

    The per-epoch history entry is the sample-weighted mean of the minibatch
    losses seen during that epoch.
    """
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise ShapeError(f"need matching non-empty 2-D inputs/targets, got {X.shape} and {Y.shape}")
    if X.shape[1] != arch.d_in or Y.shape[1] != arch.d_out:
        raise ShapeError(f"pairs of shape {X.shape[1]}->{Y.shape[1]} do not fit widths {arch.widths}")

    model = init_weights(arch, cfg.seed)
    model.input_stats, model.output_stats = input_stats, output_stats
    params = model.weights + model.biases
    state = AdamState.zeros_like(params)
    # shuffling uses its own stream so it does not depend on the init draw count
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    n = X.shape[0]
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            # overflow is reported as TrainingDiverged below, not as a warning
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gW, gb = backward(model, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss is {loss} at epoch {epoch}, batch {bi}", epoch, bi)
            try:
                adam_update(params, gW + gb, state, cfg)
            except TrainingDiverged:
                raise TrainingDiverged(f"non-finite gradient at epoch {epoch}, batch {bi}", epoch, bi) from None
            if not model.is_finite():
                raise TrainingDiverged(f"non-finite weights at epoch {epoch}, batch {bi}", epoch, bi)
            total += loss * len(idx)
        history.append(total / n)
        model.trained_epochs = epoch
        if epoch == 1 or epoch % 50 == 0:
            log.debug("epoch %d loss %.6g", epoch, history[-1])
    return TrainResult(model, history)
