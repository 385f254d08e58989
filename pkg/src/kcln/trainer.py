"""Epoch loop for knowledge-gated column networks.

Masks are built once. Every epoch computes gates from the advice gradients
stored at the end of the previous epoch (all zero before the first epoch),
takes one full-batch optimizer step with the gated network, then recomputes
output probabilities and stores fresh advice gradients.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .gating import AdviceState, advice_gradient, compute_gates
from .graph import KnowledgeGraph, UNLABELED
from .masks import NO_LABEL, AdviceMasks, create_mask
from .metrics import auc_pr, micro_f1
from .network import (CLNConfig, CLNParams, GateSet, NumericError, backward,
                      data_output_delta, forward, predict_all)
from .numerics import PROB_FLOOR, AdamState, adam_step
from .rules import RuleSet

log = logging.getLogger(__name__)

GATED = "gated"
COMBINED = "combined-loss"
LOG_HEADER = ["epoch", "loss", "train_f1", "test_f1", "test_aucpr",
              "gate_min", "gate_mean", "gate_max", "seconds", "gated_entities"]


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class TrainConfig:
    train_ids: np.ndarray
    epochs: int = 100
    alpha: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 1
    mode: str = GATED
    test_ids: np.ndarray | None = None
    patience: int | None = None
    min_rel_improvement: float = 1e-5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode not in (GATED, COMBINED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.train_ids = np.asarray(self.train_ids, dtype=np.int64)
        if self.train_ids.size == 0:
            raise ValueError("no training ids")
        if self.test_ids is not None:
            self.test_ids = np.asarray(self.test_ids, dtype=np.int64)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_f1: float
    test_f1: float
    test_aucpr: float
    gate_min: float
    gate_mean: float
    gate_max: float
    seconds: float
    gated_entities: int

    def row(self) -> list:
        return [getattr(self, k) for k in LOG_HEADER]


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    masks: AdviceMasks | None = None
    final_gates: GateSet | None = None
    advice_state: AdviceState | None = None
    final_probs: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_HEADER)
            for r in self.records:
                w.writerow(r.row())


def evaluate_probs(probs: np.ndarray, g: KnowledgeGraph, ids) -> tuple:
    """``(micro_f1, auc_pr)`` on ``ids``; AUC-PR is NaN unless binary and defined."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return math.nan, math.nan
    gold = g.labels[ids]
    f1 = micro_f1(np.argmax(probs[ids], axis=1), gold, g.num_labels)
    ap = math.nan
    if g.num_labels == 2 and 0 < gold.sum() < gold.size:
        ap = auc_pr(probs[ids, 1], gold == 1)
    return f1, ap


def combined_output_delta(probs, g: KnowledgeGraph, ids, preferred, alpha: float) -> np.ndarray:
    """Logit gradient of the data/advice mixture objective.

    For a training entity with an advised label the per-entity gradient is
    ``-[(1 - alpha)(onehot(y) - P) + alpha (onehot(y_adv) - P)] / |ids|``;
    entities without advice keep the plain cross-entropy gradient.
    """
    delta = data_output_delta(probs, g, ids)
    ids = np.asarray(ids, dtype=np.int64)
    adv = ids[preferred[ids] != NO_LABEL]
    if adv.size:
        advice_part = probs[adv].copy()
        advice_part[np.arange(adv.size), preferred[adv]] -= 1.0
        delta[adv] = (1.0 - alpha) * delta[adv] + alpha * (advice_part / ids.size)
    return delta


def combined_loss(probs, g, ids, preferred, alpha: float) -> float:
    ids = np.asarray(ids, dtype=np.int64)
    data = -np.log(np.maximum(probs[ids, g.labels[ids]], PROB_FLOOR))
    pref = preferred[ids]
    has = pref != NO_LABEL
    adv = np.zeros(ids.size)
    adv[has] = -np.log(np.maximum(probs[ids[has], pref[has]], PROB_FLOOR))
    per = np.where(has, (1.0 - alpha) * data + alpha * adv, data)
    return float(np.mean(per))


def build_masks(g: KnowledgeGraph, rules: RuleSet, train_ids, relation_names=None):
    """Masks for ``rules`` where tie-breaking may only see training labels."""
    if rules is None or len(rules) == 0:
        return None
    visible = np.full(g.num_entities, UNLABELED, dtype=np.int64)
    visible[train_ids] = g.labels[train_ids]
    masks = create_mask(g, rules, known_labels=visible, relation_names=relation_names)
    return None if masks.is_empty() else masks


def train(g: KnowledgeGraph, rules: RuleSet, cln_cfg: CLNConfig, t_cfg: TrainConfig,
          masks: AdviceMasks | None = None, params: CLNParams | None = None) -> tuple:
    """Train a (knowledge-gated) column network; returns ``(params, history)``.

    With no rules, no matches, or ``alpha = 0`` every gate is exactly 1 and
    the run reproduces vanilla training bit for bit.
    """
    if masks is None:
        masks = build_masks(g, rules, t_cfg.train_ids, cln_cfg.relation_names)
    if np.any(g.labels[t_cfg.train_ids] == UNLABELED):
        raise ValueError("training ids include unlabeled entities")
    params = CLNParams.init(cln_cfg, t_cfg.seed) if params is None else params.copy()
    adam = {name: AdamState(a.shape, t_cfg.lr, t_cfg.beta1, t_cfg.beta2, t_cfg.eps)
            for name, a in params.named_arrays()}
    state = AdviceState.initial(g.num_entities, g.num_labels)
    preferred = masks.preferred if masks is not None else None
    history = TrainHistory(masks=masks)
    best, stale = math.inf, 0
    cache = None
    gates = None
    for epoch in range(1, t_cfg.epochs + 1):
        start = time.perf_counter()
        gates = compute_gates(state, masks, t_cfg.alpha) if masks is not None else None
        try:
            if cache is None or gates is not None:
                cache = forward(g, cln_cfg, params, gates)
            if t_cfg.mode == COMBINED and preferred is not None:
                value = combined_loss(cache.probs, g, t_cfg.train_ids, preferred, t_cfg.alpha)
                delta = combined_output_delta(cache.probs, g, t_cfg.train_ids, preferred,
                                              t_cfg.alpha)
            else:
                value = _ce(cache.probs, g, t_cfg.train_ids)
                delta = None
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}", epoch)
            grads = backward(cache, g, cln_cfg, params, t_cfg.train_ids, gates, delta)
            for (name, p), (_, gr) in zip(params.named_arrays(), grads.named_arrays()):
                params.set_array(name, adam_step(p, gr, adam[name]))
            cache = forward(g, cln_cfg, params, gates)
        except NumericError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}", epoch) from exc
        if masks is not None:
            state = advice_gradient(cache.probs, masks, epoch)
        train_f1, _ = evaluate_probs(cache.probs, g, t_cfg.train_ids)
        test_f1, test_ap = (evaluate_probs(cache.probs, g, t_cfg.test_ids)
                            if t_cfg.test_ids is not None else (math.nan, math.nan))
        gmin, gmean, gmax = gates.stats() if gates is not None else (1.0, 1.0, 1.0)
        gated = 0
        if gates is not None:
            gated = int(np.sum((gates.gamma_w != 1.0) | np.any(gates.gamma_c != 1.0, axis=1)))
        history.records.append(EpochRecord(epoch, value, train_f1, test_f1, test_ap, gmin, gmean,
                                           gmax, time.perf_counter() - start, gated))
        log.debug("epoch %d loss %.6f test_f1 %.4f", epoch, value, test_f1)
        if t_cfg.patience is not None:
            if best == math.inf or (best - value) > t_cfg.min_rel_improvement * abs(best):
                best, stale = min(best, value), 0
            else:
                stale += 1
                if stale >= t_cfg.patience:
                    break
    history.final_gates = gates
    history.advice_state = state
    history.final_probs = cache.probs
    return params, history


def _ce(probs, g, ids) -> float:
    return float(np.mean(-np.log(np.maximum(probs[ids, g.labels[ids]], PROB_FLOOR))))


def train_vanilla(g: KnowledgeGraph, cln_cfg: CLNConfig, t_cfg: TrainConfig) -> tuple:
    """Baseline column network: every gate fixed at 1."""
    return train(g, RuleSet(), cln_cfg, t_cfg)


def predict_labels(g, cln_cfg, params, gates=None) -> np.ndarray:
    return predict_all(forward(g, cln_cfg, params, gates))
