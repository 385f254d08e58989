"""Synthetic relational datasets with planted preference rules.

Rule ``k`` has the shape::

    HasWord(E1,'key<k>') & rel<r>(E1,E2) & HasWord(E2,'cue<k>') => label(E1,<head_k>)+

Every entity matching a rule body takes the rule's head label. A fraction
``label_noise`` of those entities is then relabeled, and the flips are
systematic: they hit the entities with the largest value of the ``bias``
feature, a contiguous region of feature space. All other entities get
labels from a weak linear function of background features.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import build_graph, save_graph
from .masks import create_mask, match_rule
from .rules import parse_rules

FILES = ("nodes.tsv", "edges.tsv", "vocab.tsv", "advice.adv", "report.json")


@dataclass(frozen=True)
class SynthSpec:
    num_entities: int = 1000
    feature_dim: int = 50
    num_relations: int = 2
    num_labels: int = 3
    planted_rules: int = 2
    label_noise: float = 0.3
    feature_noise: float = 0.3
    edge_density: float = 2.0
    seed: int = 0
    key_rate: float = 0.3
    cue_rate: float = 0.4
    signal_noise: float = 0.1
    key_contrast: float = 0.0

    def validate(self) -> None:
        if min(self.num_entities, self.feature_dim, self.num_relations, self.num_labels) < 1:
            raise ValueError("dimensions must be positive")
        if self.num_labels < 2:
            raise ValueError("need at least two labels")
        if not 1 <= self.planted_rules <= self.num_labels:
            raise ValueError("planted_rules must lie in [1, num_labels]")
        if self.feature_dim < 2 * self.planted_rules + 2:
            raise ValueError("feature_dim too small for the planted rules")
        for name in ("label_noise", "feature_noise"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.planted_rules * self.key_rate > 1.0 or not 0 < self.cue_rate <= 1:
            raise ValueError("key_rate * planted_rules must be <= 1 and cue_rate in (0, 1]")
        if self.edge_density < 0:
            raise ValueError("edge_density must be >= 0")


def label_names(num_labels: int) -> list[str]:
    return [f"label{k}" for k in range(num_labels)]


def head_label(k: int, num_labels: int) -> int:
    return (k + 1) % num_labels


def noise_label(planted: int, num_labels: int) -> int:
    return (planted + 1) % num_labels


def rule_text(spec: SynthSpec) -> str:
    names = label_names(spec.num_labels)
    lines = ["# planted rules"]
    for k in range(spec.planted_rules):
        rel = f"rel{k % spec.num_relations}"
        lines.append(f"HasWord(E1,'key{k}') & {rel}(E1,E2) & HasWord(E2,'cue{k}') "
                     f"=> label(E1,{names[head_label(k, spec.num_labels)]})+")
    return "\n".join(lines) + "\n"


def generate_graph(spec: SynthSpec):
    """Build ``(graph, rules, report)`` in memory."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, F, P = spec.num_entities, spec.feature_dim, spec.planted_rules
    vocab = {}
    for k in range(P):
        vocab[f"HasWord:key{k}"] = 2 * k
        vocab[f"HasWord:cue{k}"] = 2 * k + 1
    bias_idx = 2 * P
    vocab["HasWord:bias"] = bias_idx
    background = np.arange(bias_idx + 1, F)
    for j in background:
        vocab[f"HasWord:w{j}"] = int(j)

    x = np.zeros((n, F))
    # at most one key per entity so rule bodies never compete for a head
    key_of = rng.choice(P + 1, size=n, p=[*([spec.key_rate] * P), 1.0 - P * spec.key_rate])
    for k in range(P):
        has_key = key_of == k
        x[has_key, 2 * k] = rng.uniform(0.5, 1.0, size=has_key.sum())
        has_cue = rng.random(n) < spec.cue_rate
        x[has_cue, 2 * k + 1] = rng.uniform(0.5, 1.0, size=has_cue.sum())
    x[:, bias_idx] = rng.uniform(0.0, 1.0, size=n)
    bg = rng.random((n, background.size)) < spec.feature_noise
    x[:, background] = np.where(bg, rng.uniform(0.1, 1.0, size=bg.shape), 0.0)
    x = np.round(x, 6)

    edges = {}
    m = int(round(spec.edge_density * n / 2))
    for r in range(spec.num_relations):
        src = rng.integers(0, n, size=m)
        dst = rng.integers(0, n, size=m)
        keep = src != dst
        edges[f"rel{r}"] = list(zip(src[keep].tolist(), dst[keep].tolist()))

    weights = rng.normal(size=(background.size, spec.num_labels))
    scores = x[:, background] @ weights + spec.signal_noise * rng.gumbel(size=(n, spec.num_labels))
    for k in range(P):
        # the key alone leans away from the head label; only the full body implies it
        scores[:, head_label(k, spec.num_labels)] -= spec.key_contrast * x[:, 2 * k]
    planted = np.argmax(scores, axis=1)

    names = label_names(spec.num_labels)
    ids = [f"n{i:05d}" for i in range(n)]
    g = build_graph(ids, x, planted, names, edges, vocab, symmetric=True)
    rules = parse_rules(rule_text(spec))

    determined = np.zeros(n, dtype=bool)
    for k, rule in enumerate(rules):
        for b in match_rule(g, rule):
            planted[b["E1"]] = head_label(k, spec.num_labels)
            determined[b["E1"]] = True
    emitted = planted.copy()
    det_idx = np.flatnonzero(determined)
    n_flip = int(np.floor(spec.label_noise * det_idx.size + 0.5))
    # systematic: the flipped block is the top of the bias-feature ordering
    order = det_idx[np.argsort(-x[det_idx, bias_idx], kind="mergesort")]
    flipped = np.sort(order[:n_flip])
    emitted[flipped] = noise_label(planted[flipped], spec.num_labels)

    g = build_graph(ids, x, emitted, names, g.relations, vocab, symmetric=False)
    masks = create_mask(g, rules)
    report = {
        "spec": asdict(spec),
        "label_names": names,
        "rule_determined": [ids[i] for i in det_idx],
        "satisfied": [ids[i] for i in masks.satisfied],
        "flipped": [ids[i] for i in flipped],
        "planted_labels": {ids[i]: names[planted[i]] for i in range(n)},
        "measured_noise": (float(n_flip / det_idx.size) if det_idx.size else 0.0),
    }
    return g, rules, report


def generate(spec: SynthSpec, out_dir) -> dict:
    """Write the dataset bundle to ``out_dir``; returns the file paths."""
    g, rules, report = generate_graph(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in FILES}
    save_graph(g, paths["nodes.tsv"], paths["edges.tsv"], paths["vocab.tsv"])
    paths["advice.adv"].write_text(rule_text(spec), encoding="utf-8")
    paths["report.json"].write_text(json.dumps(report, indent=1, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return paths
