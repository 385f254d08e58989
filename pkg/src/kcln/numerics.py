"""Dense float64 primitives used by the column network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    pass


def matvec(m, v):
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {m.shape} by {v.shape}")
    return m @ v


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis`` (rows for a matrix)."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("softmax input contains NaN")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def cross_entropy(probs, gold: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= gold < probs.shape[-1]:
        raise IndexError(f"gold label {gold} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[gold], PROB_FLOOR)))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x):
    # subgradient 0 at exactly 0
    return (np.asarray(x) > 0).astype(np.float64)


def glorot_init(rows: int, cols: int, seed) -> np.ndarray:
    """Uniform Glorot/Xavier matrix in +-sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise ValueError("dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class AdamState:
    """Moment accumulators for one parameter array."""

    shape: tuple
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = tuple(self.shape)
        if self.m is None:
            self.m = np.zeros(self.shape)
        if self.v is None:
            self.v = np.zeros(self.shape)
        if self.m.shape != self.shape or self.v.shape != self.shape:
            raise ShapeError("accumulator shape differs from parameter shape")


def adam_step(param, grad, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update. Mutates ``state``; returns the new param."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != state.shape or grad.shape != state.shape:
        raise ShapeError(f"param {param.shape} / grad {grad.shape} vs state {state.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def numerical_gradient(f, x, eps=1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        f_plus = f(x)
        flat[k] = orig - eps
        f_minus = f(x)
        flat[k] = orig
        gflat[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, floor=1e-8) -> float:
    """Max componentwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ShapeError(f"{a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def finite_diff_check(f, grad_f, x, eps=1e-6, floor=1e-8) -> float:
    """Max relative error between ``grad_f(x)`` and central differences of ``f``."""
    x = np.asarray(x, dtype=np.float64)
    return relative_error(grad_f(x), numerical_gradient(f, x, eps), floor)
