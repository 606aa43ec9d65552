"""Hand-differentiated layers for the text CNN.

Every layer is a forward function returning ``(output, cache)`` paired with a
backward function that accumulates into ``Parameter.grad`` and returns the
gradient with respect to its input. Layers accept arbitrary leading batch
dimensions. All arithmetic is float64.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DocumentTooShort, IndexOutOfRange, NonFiniteValue, ShapeMismatch


class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64 bit generator seeded through ``SeedSequence``,
    whose output is specified bit-for-bit and platform independent.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def derive(self, *keys: int) -> "Rng":
        """Independent child stream determined by ``(seed, *keys)``."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        ss = np.random.SeedSequence([self.seed, *keys])
        child.generator = np.random.Generator(np.random.PCG64(ss))
        return child

    def random(self, shape=None) -> np.ndarray:
        return self.generator.random(shape)

    def uniform(self, low, high, shape=None) -> np.ndarray:
        return self.generator.uniform(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, shape=None) -> np.ndarray:
        return self.generator.integers(low, high, shape)


class Parameter:
    """A trainable array with its gradient and adadelta accumulators."""

    def __init__(self, value, name: str = ""):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.acc_grad_sq = np.zeros_like(self.value)
        self.acc_delta_sq = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


# --- embedding ----------------------------------------------------------------

def embedding_forward(indices: np.ndarray, table: Parameter) -> np.ndarray:
    indices = np.asarray(indices)
    rows = table.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= rows):
        raise IndexOutOfRange(f"index outside [0, {rows - 1}]")
    return table.value[indices]


def embedding_backward(indices: np.ndarray, table: Parameter, grad_out: np.ndarray) -> None:
    d = table.shape[1]
    np.add.at(table.grad, np.asarray(indices).reshape(-1), grad_out.reshape(-1, d))


# --- convolution --------------------------------------------------------------

def conv1d_forward(x: np.ndarray, filters: Parameter, bias: Parameter):
    """Narrow stride-1 convolution over time.

    ``x`` is ``[..., L, d]`` and ``filters`` ``[m, h, d]``; the output is
    ``[..., L - h + 1, m]``.
    """
    m, h, d = filters.shape
    if x.shape[-1] != d:
        raise ShapeMismatch(f"input width {x.shape[-1]} != filter width {d}")
    length = x.shape[-2]
    if length < h:
        raise DocumentTooShort(f"document length {length} < window {h}")
    t = length - h + 1
    # row (..., s) holds x[..., s:s+h, :] flattened; 2-D matmuls keep BLAS fast
    windows = np.concatenate([x[..., i:i + t, :] for i in range(h)], axis=-1)
    flat = windows.reshape(-1, h * d)
    out = (flat @ filters.value.reshape(m, h * d).T + bias.value).reshape(*x.shape[:-2], t, m)
    return out, (flat, length)


def conv1d_backward(grad_out: np.ndarray, cache, filters: Parameter, bias: Parameter) -> np.ndarray:
    flat, length = cache
    m, h, d = filters.shape
    g2 = grad_out.reshape(-1, m)
    filters.grad += (g2.T @ flat).reshape(m, h, d)
    bias.grad += g2.sum(axis=0)
    gw = (g2 @ filters.value.reshape(m, h * d)).reshape(*grad_out.shape[:-1], h, d)
    t = grad_out.shape[-2]
    grad_x = np.zeros((*grad_out.shape[:-2], length, d))
    for i in range(h):
        grad_x[..., i:i + t, :] += gw[..., i, :]
    return grad_x


# --- pooling ------------------------------------------------------------------

def max_over_time_pool(x: np.ndarray):
    """Max over the time axis (``-2``); ties go to the lowest time index."""
    if x.shape[-2] < 1:
        raise ShapeMismatch("pooling needs at least one time step")
    argmax = x.argmax(axis=-2)
    values = np.take_along_axis(x, argmax[..., None, :], axis=-2)[..., 0, :]
    return values, argmax


def max_pool_backward(grad_out: np.ndarray, argmax: np.ndarray, steps: int) -> np.ndarray:
    grad_in = np.zeros((*grad_out.shape[:-1], steps, grad_out.shape[-1]))
    np.put_along_axis(grad_in, argmax[..., None, :], grad_out[..., None, :], axis=-2)
    return grad_in


# --- dense --------------------------------------------------------------------

ACTIVATIONS = ("relu", "none")


def dense_forward(x: np.ndarray, weights: Parameter, bias: Parameter, activation: str = "none"):
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    p, n = weights.shape
    if x.shape[-1] != n or bias.shape != (p,):
        raise ShapeMismatch(f"input {x.shape} incompatible with weights {weights.shape}")
    z = (x.reshape(-1, n) @ weights.value.T + bias.value).reshape(*x.shape[:-1], p)
    out = np.maximum(z, 0.0) if activation == "relu" else z
    return out, (x, z, activation)


def dense_backward(grad_out: np.ndarray, cache, weights: Parameter, bias: Parameter) -> np.ndarray:
    x, z, activation = cache
    if activation == "relu":
        grad_out = grad_out * (z > 0)
    p, n = weights.shape
    g2 = grad_out.reshape(-1, p)
    weights.grad += g2.T @ x.reshape(-1, n)
    bias.grad += g2.sum(axis=0)
    return (g2 @ weights.value).reshape(*grad_out.shape[:-1], n)


# --- dropout ------------------------------------------------------------------

def dropout(x: np.ndarray, rate: float, training: bool, rng: Rng | None):
    """Inverted dropout. Returns ``(output, mask)``; mask is None for identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


# --- loss ---------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, gold):
    """Returns ``(loss, prob, grad_logits)``.

    For batched ``[B, c]`` logits, ``loss`` is the per-example array and the
    gradient is per example (not averaged).
    """
    logits = np.asarray(logits, dtype=np.float64)
    gold = np.asarray(gold)
    c = logits.shape[-1]
    if np.any(gold < 0) or np.any(gold >= c):
        raise IndexError("gold class out of range")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_prob = shifted - log_z
    prob = np.exp(log_prob)
    loss = -np.take_along_axis(log_prob, gold[..., None], axis=-1)[..., 0]
    grad = prob.copy()
    np.put_along_axis(grad, gold[..., None], np.take_along_axis(grad, gold[..., None], axis=-1) - 1.0,
                      axis=-1)
    if loss.ndim == 0:
        loss = float(loss)
    return loss, prob, grad


# --- optimizer ----------------------------------------------------------------

def adadelta_step(param: Parameter, rho: float = 0.95, eps: float = 1e-6) -> None:
    g = param.grad
    param.acc_grad_sq *= rho
    param.acc_grad_sq += (1.0 - rho) * g * g
    delta = -np.sqrt(param.acc_delta_sq + eps) / np.sqrt(param.acc_grad_sq + eps) * g
    param.acc_delta_sq *= rho
    param.acc_delta_sq += (1.0 - rho) * delta * delta
    param.value += delta
    param.zero_grad()


# --- verification -------------------------------------------------------------

def grad_check(loss_fn: Callable[[], float], params: Sequence[Parameter],
               epsilon: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` evaluates a scalar loss and accumulates analytic gradients into
    ``params``. Relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as the
    denominator. Gradients are left zeroed.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-6, 1e-4]")
    params = list(params)
    for p in params:
        p.zero_grad()
    base = loss_fn()
    if not math.isfinite(base):
        raise NonFiniteValue("loss is not finite")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = loss_fn()
            flat[i] = orig - epsilon
            f_minus = loss_fn()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NonFiniteValue(f"non-finite loss perturbing {p.name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            an = a.flat[i]
            if not math.isfinite(an):
                raise NonFiniteValue(f"non-finite analytic gradient in {p.name}[{i}]")
            err = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
