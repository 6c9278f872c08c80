"""
etrl — Feed-forward network core.

Minimal multilayer perceptron with exact backpropagation, an Adam optimizer
and the two distribution heads the policy uses:

  • GaussianHead   — diagonal Gaussian over the control, state-independent log_std
  • BernoulliHead  — trigger probability σ(logit); deterministic rule logit ≥ 0

Layout
──────
weights[l] : (layer_dims[l+1], layer_dims[l])   row-major, float64
biases[l]  : (layer_dims[l+1],)
hidden     : tanh
output     : identity

``net_forward`` accepts a single vector ``(in,)`` or a batch ``(B, in)``;
``net_backward`` sums parameter gradients over the batch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from src.core.errors import ConfigurationError, NumericError, ShapeError

logger = logging.getLogger(__name__)

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# ═══════════════════════════════════════════════════════════════════════════
# Network
# ═══════════════════════════════════════════════════════════════════════════

@dataclass
class Network:
    """Parameter container for one MLP."""
    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> List[np.ndarray]:
        """Parameters in canonical order [W0, b0, W1, b1, …]."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Network":
        """New network sharing ``layer_dims`` with the given parameter list."""
        if len(params) != 2 * self.n_layers:
            raise ShapeError(f"expected {2 * self.n_layers} parameter arrays, got {len(params)}")
        weights = [np.asarray(params[2 * i], dtype=np.float64) for i in range(self.n_layers)]
        biases = [np.asarray(params[2 * i + 1], dtype=np.float64) for i in range(self.n_layers)]
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]) or b.shape != (self.layer_dims[l + 1],):
                raise ShapeError(f"layer {l}: parameter shapes {w.shape}/{b.shape} do not match dims")
        return Network(self.layer_dims, weights, biases)

    def copy(self) -> "Network":
        return Network(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class ForwardCache:
    """Per-layer pre-activations ``z`` and post-activations ``a`` (a[0] is the input)."""
    layer_dims: Tuple[int, ...]
    pre: List[np.ndarray]
    post: List[np.ndarray]
    batched: bool


@dataclass
class NetGradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def as_list(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def net_init(layer_dims: Sequence[int], seed: int) -> Network:
    """
    Uniform ±1/sqrt(fan_in) weights, zero biases, deterministic given ``seed``.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"layer_dims must have ≥ 2 positive entries, got {list(layer_dims)}")

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Network(dims, weights, biases)


def net_forward(net: Network, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Evaluate the network; returns (output, cache for ``net_backward``)."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise ShapeError(f"input shape {x.shape} does not match input dim {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")

    a = x if batched else x[None, :]
    pre: List[np.ndarray] = []
    post: List[np.ndarray] = [a]
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if l == last else np.tanh(z)
        pre.append(z)
        post.append(a)

    out = a if batched else a[0]
    return out, ForwardCache(net.layer_dims, pre, post, batched)


def net_backward(net: Network, cache: ForwardCache, grad_output: np.ndarray) -> NetGradients:
    """Exact chain rule; gradients are summed over the batch dimension."""
    if cache.layer_dims != net.layer_dims or len(cache.pre) != net.n_layers:
        raise ShapeError("stale forward cache: network architecture changed")
    g = np.asarray(grad_output, dtype=np.float64)
    if not cache.batched:
        g = g[None, :] if g.ndim == 1 else g
    batch = cache.post[0].shape[0]
    if g.shape != (batch, net.output_dim):
        raise ShapeError(f"grad_output shape {np.shape(grad_output)} does not match output ({batch}, {net.output_dim})")

    d_w: List[np.ndarray] = [np.empty(0)] * net.n_layers
    d_b: List[np.ndarray] = [np.empty(0)] * net.n_layers
    delta = g
    for l in range(net.n_layers - 1, -1, -1):
        d_w[l] = delta.T @ cache.post[l]
        d_b[l] = delta.sum(axis=0)
        if l > 0:
            # post[l] = tanh(pre[l-1])
            delta = (delta @ net.weights[l]) * (1.0 - cache.post[l] ** 2)
    return NetGradients(d_w, d_b)


# ═══════════════════════════════════════════════════════════════════════════
# Adam
# ═══════════════════════════════════════════════════════════════════════════

@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stab: float = 1e-8


def adam_init(params: Sequence[np.ndarray], learning_rate: float = 3e-4,
              beta1: float = 0.9, beta2: float = 0.999, epsilon_stab: float = 1e-8) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
        second_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
        step_count=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon_stab=epsilon_stab,
    )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer moments differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; Adam update refused")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_stab))
        new_m.append(m)
        new_v.append(v)

    new_state = AdamState(new_m, new_v, t, state.learning_rate, b1, b2, state.epsilon_stab)
    return new_params, new_state


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Scale ``grads`` jointly so their global L2 norm is at most ``max_norm`` (0 disables)."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm <= 0 or norm <= max_norm:
        return list(grads), norm
    scale = max_norm / (norm + 1e-12)
    return [g * scale for g in grads], norm


# ═══════════════════════════════════════════════════════════════════════════
# Distribution heads
# ═══════════════════════════════════════════════════════════════════════════

@dataclass
class GaussianHead:
    mean: np.ndarray
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.clip(np.asarray(self.log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)


@dataclass
class BernoulliHead:
    logit: float

    @property
    def probability(self) -> float:
        return float(sigmoid(self.logit))


def sigmoid(x):
    """Numerically stable logistic function (scalar or array)."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=np.float64)))


def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)


def gaussian_logprob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray):
    """Diagonal-Gaussian log density summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    if mean.shape != action.shape or mean.shape[-1] != log_std.shape[-1]:
        raise ShapeError(f"shapes differ: mean {mean.shape}, log_std {log_std.shape}, action {action.shape}")
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def gaussian_logprob_grads(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray):
    """(∂logp/∂mean, ∂logp/∂log_std), same shape as ``mean``."""
    inv_var = np.exp(-2.0 * log_std)
    diff = action - mean
    return diff * inv_var, diff * diff * inv_var - 1.0


def gaussian_sample(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Reparameterised draw mean + exp(log_std)·z."""
    mean = np.asarray(mean, dtype=np.float64)
    z = rng.standard_normal(mean.shape)
    return mean + np.exp(clamp_log_std(log_std)) * z


def bernoulli_logprob(logit, outcome):
    """log σ(logit) for outcome 1, log(1 − σ(logit)) for outcome 0 (log-sum-exp form)."""
    logit = np.asarray(logit, dtype=np.float64)
    outcome = np.asarray(outcome)
    if np.any((outcome != 0) & (outcome != 1)):
        raise ConfigurationError("Bernoulli outcome must be 0 or 1")
    res = np.where(outcome == 1, -np.logaddexp(0.0, -logit), -np.logaddexp(0.0, logit))
    return float(res) if res.ndim == 0 else res


def bernoulli_entropy(logit):
    """H = softplus(l) − l·σ(l)."""
    logit = np.asarray(logit, dtype=np.float64)
    res = np.logaddexp(0.0, logit) - logit * sigmoid(logit)
    return float(res) if res.ndim == 0 else res


def bernoulli_entropy_grad(logit):
    """dH/dl = −l·σ(l)·(1 − σ(l))."""
    p = sigmoid(logit)
    return -np.asarray(logit, dtype=np.float64) * p * (1.0 - p)


def gaussian_entropy(log_std: np.ndarray) -> float:
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(0.5 + _HALF_LOG_2PI + log_std))


def entropy(gaussian: GaussianHead, bernoulli: BernoulliHead) -> float:
    """Joint entropy of the independent control and trigger heads."""
    return gaussian_entropy(gaussian.log_std) + bernoulli_entropy(bernoulli.logit)
