"""Five-layer fully connected classifier written directly in numpy.

Architecture, for an input of 8 x f percent changes::

    (8f -> 64) -> BN -> ReLU
    (64 -> 32) -> BN -> ReLU
    (32 -> 16) -> BN -> ReLU
    (16 -> 8)  -> BN -> ReLU
    (8 -> 2)   -> softmax          # column 0 = up, column 1 = down

Batch normalization uses batch statistics in ``train`` mode (and
updates the running statistics with ``bn_momentum``) and the running
statistics in ``inference`` mode.  All arithmetic is float64.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .features import WINDOW_QUARTERS, FeatureWindow

logger = logging.getLogger(__name__)

HIDDEN_WIDTHS: Tuple[int, ...] = (64, 32, 16, 8)
N_CLASSES = 2
N_LAYERS = len(HIDDEN_WIDTHS) + 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PROB_FLOOR = 1e-30

TRAIN = "train"
INFERENCE = "inference"


def layer_shapes(n_features: int) -> List[Tuple[int, int]]:
    """(n_in, n_out) of each fully connected layer for ``n_features`` statement features."""
    dims = [WINDOW_QUARTERS * n_features, *HIDDEN_WIDTHS, N_CLASSES]
    return list(zip(dims[:-1], dims[1:]))


@dataclass
class ModelParams:
    """Weights, biases and batch-norm state of the network."""

    n_features: int
    seed: int
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    gammas: List[np.ndarray]
    betas: List[np.ndarray]
    running_means: List[np.ndarray]
    running_vars: List[np.ndarray]

    @property
    def input_dim(self) -> int:
        return WINDOW_QUARTERS * self.n_features

    def trainables(self) -> List[np.ndarray]:
        """The arrays Adam updates, in a fixed order shared with :class:`Gradients`."""
        return [*self.weights, *self.biases, *self.gammas, *self.betas]

    def arrays(self) -> List[Tuple[str, np.ndarray]]:
        """Every array with a stable name, running statistics included."""
        named = []
        for prefix, group in (
            ("W", self.weights),
            ("b", self.biases),
            ("gamma", self.gammas),
            ("beta", self.betas),
            ("running_mean", self.running_means),
            ("running_var", self.running_vars),
        ):
            named.extend((f"{prefix}{i + 1}", arr) for i, arr in enumerate(group))
        return named

    def copy(self) -> "ModelParams":
        return ModelParams(
            n_features=self.n_features,
            seed=self.seed,
            weights=[a.copy() for a in self.weights],
            biases=[a.copy() for a in self.biases],
            gammas=[a.copy() for a in self.gammas],
            betas=[a.copy() for a in self.betas],
            running_means=[a.copy() for a in self.running_means],
            running_vars=[a.copy() for a in self.running_vars],
        )

    def validate(self) -> None:
        """Check shapes against ``n_features``, positivity of variances and finiteness."""
        shapes = layer_shapes(self.n_features)
        if len(self.weights) != N_LAYERS or len(self.biases) != N_LAYERS:
            raise ShapeError(f"expected {N_LAYERS} layers, got {len(self.weights)}")
        for i, ((n_in, n_out), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ShapeError(
                    f"layer {i + 1}: expected W {(n_in, n_out)} and b {(n_out,)}, "
                    f"got {w.shape} and {b.shape}"
                )
        for group in (self.gammas, self.betas, self.running_means, self.running_vars):
            if [a.shape for a in group] != [(w,) for w in HIDDEN_WIDTHS]:
                raise ShapeError("batch-norm arrays do not match the hidden widths")
        if any(np.any(v <= 0) for v in self.running_vars):
            raise NumericError("running variances must be positive")
        for name, arr in self.arrays():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"parameter {name} is not finite")


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    gammas: List[np.ndarray]
    betas: List[np.ndarray]

    def as_list(self) -> List[np.ndarray]:
        return [*self.weights, *self.biases, *self.gammas, *self.betas]


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, consumed by :func:`backward`."""

    mode: str
    weights: List[np.ndarray]
    gammas: List[np.ndarray]
    inputs: List[np.ndarray] = field(default_factory=list)
    xhat: List[np.ndarray] = field(default_factory=list)
    pre_relu: List[np.ndarray] = field(default_factory=list)
    inv_std: List[np.ndarray] = field(default_factory=list)
    probs: np.ndarray = field(default_factory=lambda: np.empty((0, N_CLASSES)))


def init_params(n_features: int, seed: int) -> ModelParams:
    """Xavier-uniform weights, zero biases, identity batch norm."""
    if n_features < 1:
        raise ConfigError(f"need at least one feature, got {n_features}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in layer_shapes(n_features):
        limit = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return ModelParams(
        n_features=n_features,
        seed=seed,
        weights=weights,
        biases=biases,
        gammas=[np.ones(w) for w in HIDDEN_WIDTHS],
        betas=[np.zeros(w) for w in HIDDEN_WIDTHS],
        running_means=[np.zeros(w) for w in HIDDEN_WIDTHS],
        running_vars=[np.ones(w) for w in HIDDEN_WIDTHS],
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def forward(
    params: ModelParams,
    batch: np.ndarray,
    mode: str = TRAIN,
    bn_momentum: float = BN_MOMENTUM,
    bn_eps: float = BN_EPS,
) -> Tuple[np.ndarray, ForwardCache]:
    """Class probabilities for a batch of flattened windows.

    In ``train`` mode the running batch-norm statistics of ``params``
    are updated; ``inference`` mode leaves ``params`` untouched.
    """
    if mode not in (TRAIN, INFERENCE):
        raise ConfigError(f"unknown mode {mode!r}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"expected a (B, {params.input_dim}) batch, got {x.shape}")
    n = x.shape[0]
    if mode == TRAIN and n < 2:
        raise ShapeError("train mode needs at least 2 rows for batch statistics")
    if not np.all(np.isfinite(x)):
        raise NumericError("input batch is not finite")

    cache = ForwardCache(mode=mode, weights=params.weights, gammas=params.gammas)
    a = x
    for layer in range(len(HIDDEN_WIDTHS)):
        cache.inputs.append(a)
        z = a @ params.weights[layer] + params.biases[layer]
        if mode == TRAIN:
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + bn_eps)
            xhat = (z - mean) * inv_std
            params.running_means[layer] = (
                (1.0 - bn_momentum) * params.running_means[layer] + bn_momentum * mean
            )
            params.running_vars[layer] = (
                (1.0 - bn_momentum) * params.running_vars[layer]
                + bn_momentum * var * n / (n - 1)
            )
        else:
            inv_std = 1.0 / np.sqrt(params.running_vars[layer] + bn_eps)
            xhat = (z - params.running_means[layer]) * inv_std
        y = params.gammas[layer] * xhat + params.betas[layer]
        a = np.maximum(y, 0.0)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite activation in layer {layer + 1}")
        cache.xhat.append(xhat)
        cache.pre_relu.append(y)
        cache.inv_std.append(inv_std)

    cache.inputs.append(a)
    logits = a @ params.weights[-1] + params.biases[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericError(f"non-finite activation in layer {N_LAYERS}")
    cache.probs = softmax(logits)
    return cache.probs, cache


def _one_hot(labels: np.ndarray, n_rows: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (n_rows, N_CLASSES):
            raise ShapeError(f"expected ({n_rows}, {N_CLASSES}) one-hot labels, got {labels.shape}")
        return labels.astype(np.float64)
    if labels.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got {labels.shape}")
    onehot = np.zeros((n_rows, N_CLASSES))
    onehot[np.arange(n_rows), labels.astype(np.int64)] = 1.0
    return onehot


def nll_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true class.

    ``labels`` may be one-hot rows or class indices.  Probabilities
    below :data:`PROB_FLOOR` are clamped before the log.
    """
    onehot = _one_hot(labels, probs.shape[0])
    true_prob = (probs * onehot).sum(axis=1)
    clamped = int(np.count_nonzero(true_prob < PROB_FLOOR))
    if clamped:
        logger.warning("clamped %d true-class probabilities below %g", clamped, PROB_FLOOR)
    return float(np.mean(-np.log(np.maximum(true_prob, PROB_FLOOR))))


def backward(cache: ForwardCache, labels: np.ndarray) -> Gradients:
    """Analytic gradients of the mean NLL with respect to every trainable array."""
    if cache.mode != TRAIN:
        raise NumericError("backward needs the cache of a train-mode forward pass")
    probs = cache.probs
    n = probs.shape[0]
    onehot = _one_hot(labels, n)

    grad_w: List[np.ndarray] = [np.empty(0)] * N_LAYERS
    grad_b: List[np.ndarray] = [np.empty(0)] * N_LAYERS
    grad_gamma: List[np.ndarray] = [np.empty(0)] * len(HIDDEN_WIDTHS)
    grad_beta: List[np.ndarray] = [np.empty(0)] * len(HIDDEN_WIDTHS)

    delta = (probs - onehot) / n
    grad_w[-1] = cache.inputs[-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    upstream = delta @ cache.weights[-1].T

    for layer in reversed(range(len(HIDDEN_WIDTHS))):
        xhat = cache.xhat[layer]
        dy = upstream * (cache.pre_relu[layer] > 0)
        grad_gamma[layer] = (dy * xhat).sum(axis=0)
        grad_beta[layer] = dy.sum(axis=0)
        dxhat = dy * cache.gammas[layer]
        dz = (cache.inv_std[layer] / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
        grad_w[layer] = cache.inputs[layer].T @ dz
        grad_b[layer] = dz.sum(axis=0)
        upstream = dz @ cache.weights[layer].T

    for w, g in zip(cache.weights, grad_w):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match weight {w.shape}")
    return Gradients(grad_w, grad_b, grad_gamma, grad_beta)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        arrays = params.trainables()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: ModelParams,
    grads: Gradients,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update, applied in place.

    Running batch-norm statistics are not trainables and are left alone.
    """
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    arrays = params.trainables()
    grad_list = grads.as_list()
    if len(arrays) != len(grad_list):
        raise ShapeError(f"{len(grad_list)} gradients for {len(arrays)} parameters")
    for i, (param, grad) in enumerate(zip(arrays, grad_list)):
        if grad.shape != param.shape:
            raise ShapeError(f"gradient {i} has shape {grad.shape}, expected {param.shape}")
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad * grad
        update = lr * (state.m[i] / correction1) / (np.sqrt(state.v[i] / correction2) + eps)
        if not np.all(np.isfinite(update)):
            raise NumericError(f"non-finite Adam update for parameter {i} at step {state.step}")
        param -= update
    return params, state


def predict(params: ModelParams, window: Union[FeatureWindow, np.ndarray]) -> np.ndarray:
    """Inference-mode probabilities ``[p_up, p_down]`` for one window."""
    x = window.flatten() if isinstance(window, FeatureWindow) else np.asarray(window, dtype=np.float64)
    if x.size != params.input_dim:
        raise ShapeError(f"window has {x.size} values, model expects {params.input_dim}")
    probs, _ = forward(params, x.reshape(1, -1), mode=INFERENCE)
    return probs[0]


def predict_batch(params: ModelParams, X: np.ndarray) -> np.ndarray:
    probs, _ = forward(params, X, mode=INFERENCE)
    return probs


def evaluate(params: ModelParams, X: np.ndarray, y: Sequence[int]) -> Tuple[float, float]:
    """(accuracy, mean NLL) on a labeled set in inference mode."""
    probs = predict_batch(params, X)
    labels = np.asarray(y, dtype=np.int64)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    return accuracy, nll_loss(probs, labels)
