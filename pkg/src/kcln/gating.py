"""Advice gradients and the exponential soft gates derived from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import NO_LABEL, AdviceMasks
from .network import GateSet


@dataclass
class AdviceState:
    """Advice gradients ``I(y_adv) - P(y)`` stored at an epoch boundary.

    ``vector`` is the label-space gradient per entity and ``scalar`` its
    reduction to the advised label's component, which drives the gates.
    """

    vector: np.ndarray
    scalar: np.ndarray
    epoch: int
    probs: np.ndarray | None = None

    @classmethod
    def initial(cls, num_entities: int, num_labels: int) -> "AdviceState":
        return cls(np.zeros((num_entities, num_labels)), np.zeros(num_entities), 0)


def advice_gradient(probs, masks: AdviceMasks, epoch: int = 0) -> AdviceState:
    """Advice gradient for every entity given output distributions ``probs``.

    Entities with a preferred label get ``onehot(pref) - P`` and the scalar
    ``1 - P(pref)``. Multi-class entities that only carry an avoided label
    get ``-P(avoided)`` on that component. Everyone else gets 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != masks.m_label.shape:
        raise ValueError(f"probabilities {probs.shape} vs label mask {masks.m_label.shape}")
    vector = np.zeros_like(probs)
    scalar = np.zeros(probs.shape[0])
    pref = masks.preferred
    rows = np.flatnonzero(pref != NO_LABEL)
    vector[rows] = masks.m_label[rows] - probs[rows]
    scalar[rows] = vector[rows, pref[rows]]
    avoid_rows = np.flatnonzero((pref == NO_LABEL) & (masks.m_avoid != NO_LABEL))
    cols = masks.m_avoid[avoid_rows]
    vector[avoid_rows, cols] = -probs[avoid_rows, cols]
    scalar[avoid_rows] = vector[avoid_rows, cols]
    return AdviceState(vector, scalar, epoch, probs.copy())


def compute_gates(state: AdviceState, masks: AdviceMasks, alpha: float) -> GateSet:
    """Gates ``exp(alpha * scalar)`` on masked entities and contexts, 1 elsewhere."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if state.scalar.shape != (masks.num_entities,):
        raise ValueError("advice state does not match masks")
    g = np.exp(alpha * state.scalar)
    gamma_w = np.where(masks.entity_gate_flag, g, 1.0)
    gamma_c = np.where(masks.m_c.astype(bool), g[:, None], 1.0)
    return GateSet(gamma_w, gamma_c, alpha)


def data_gradient(probs, labels) -> np.ndarray:
    """``onehot(y) - P`` per row, the data-side counterpart of the advice gradient."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    out = -probs.copy()
    out[np.arange(len(labels)), labels] += 1.0
    return out


def combined_gradient_diag(data_grad, advice_grad, alpha: float) -> np.ndarray:
    """Convex mix ``(1 - alpha) * data_grad + alpha * advice_grad``."""
    data_grad = np.asarray(data_grad, dtype=np.float64)
    advice_grad = np.asarray(advice_grad, dtype=np.float64)
    if data_grad.shape != advice_grad.shape:
        raise ValueError(f"{data_grad.shape} vs {advice_grad.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * data_grad + alpha * advice_grad
