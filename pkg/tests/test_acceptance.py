"""Acceptance criteria, one test per criterion.

Each test records a one-line verdict; ``conftest.py`` prints them after the
run, and running this file directly does the same. Criterion 10 needs the
PubMed dataset in the directory named by ``KCLN_PUBMED_DIR`` (``nodes.tsv``,
``edges.tsv``, ``vocab.tsv``, ``advice.adv``) and is skipped otherwise.
"""

import math
import os
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from kcln import experiments as ex
from kcln.gating import (AdviceState, advice_gradient, combined_gradient_diag, compute_gates,
                         data_gradient)
from kcln.graph import split
from kcln.masks import create_mask, match_rule
from kcln.metrics import auc_pr, micro_f1
from kcln.network import CLNConfig, CLNParams, GateSet, backward, forward, loss
from kcln.numerics import numerical_gradient, relative_error, softmax
from kcln.rules import RuleSet
from kcln.synth import SynthSpec, generate_graph
from kcln.trainer import TrainConfig, build_masks, combined_output_delta, train, train_vanilla

from conftest import RESULTS, make_graph
from oracles import (brute_force_masks, brute_force_match, confusion_f1, random_graph,
                     random_rules)

# settings shared by the planted-data criteria (6-8)
LAYERS, HIDDEN, LR, EPOCHS = 1, 40, 1e-2, 150
SEEDS = (1, 2, 3, 4, 5)


def record(number, ok, detail):
    RESULTS[number] = (bool(ok), detail)
    assert ok, detail


@lru_cache(maxsize=None)
def planted():
    g, rules, report = generate_graph(SynthSpec())
    return g, rules, report


def planted_spec(**kw):
    return ex.ExperimentSpec(layers=LAYERS, hidden=HIDDEN, lr=LR, epochs=EPOCHS, seeds=SEEDS,
                             **kw)


def test_criterion_1_gradient_check():
    start = time.perf_counter()
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(1000 + k)
        n = int(rng.integers(2, 9))
        edges = {r: [(int(a), int(b)) for a, b in rng.integers(0, n, size=(n, 2))]
                 for r in ("r0", "r1")}
        g = make_graph(n, edges, seed=k, feature_dim=3)
        cfg = CLNConfig.for_graph(g, int(rng.integers(1, 4)), 4)
        params = CLNParams.init(cfg, k)
        for name, a in params.named_arrays():
            params.set_array(name, a + 0.1 * rng.normal(size=a.shape))
        gates = GateSet(np.exp(rng.uniform(-1, 1, n)), np.exp(rng.uniform(-1, 1, (n, 2))), 1.0)
        ids = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        cache = forward(g, cfg, params, gates)
        analytic = backward(cache, g, cfg, params, ids, gates).flatten()
        numeric = numerical_gradient(
            lambda flat: loss(forward(g, cfg, params.unflatten(flat), gates), g, ids),
            params.flatten())
        worst = max(worst, relative_error(analytic, numeric, floor=1e-6))
    elapsed = time.perf_counter() - start
    record(1, worst < 1e-4 and elapsed < 30,
           f"max relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)")


def test_criterion_2_vanilla_equivalence():
    g, rules, _ = generate_graph(SynthSpec(num_entities=300, seed=4))
    s = split(g, 0.6, 0)
    cfg = CLNConfig.for_graph(g, 3, 8)
    checks = []
    for seed in (1, 2):
        tc = TrainConfig(s.train_ids, epochs=10, seed=seed)
        p_van, h_van = train_vanilla(g, cfg, tc)
        p_empty, h_empty = train(g, RuleSet(), cfg, tc)
        p_zero, h_zero = train(g, rules, cfg, TrainConfig(s.train_ids, epochs=10, alpha=0.0,
                                                          seed=seed))
        checks.append(np.array_equal(h_empty.final_probs, h_van.final_probs))
        checks.append(np.array_equal(h_zero.final_probs, h_van.final_probs))
        params = CLNParams.init(cfg, seed)
        masks = build_masks(g, rules, s.train_ids)
        gates = compute_gates(AdviceState.initial(g.num_entities, g.num_labels), masks, 1.0)
        checks.append(np.array_equal(forward(g, cfg, params, gates).probs,
                                     forward(g, cfg, params).probs))
    record(2, all(checks), f"{sum(checks)}/{len(checks)} exact matches "
                           "(empty advice, alpha 0, epoch-0 gates)")


def test_criterion_3_gate_bounds():
    violations, cells = 0, 0
    rng = np.random.default_rng(3)
    for _ in range(300):
        g = random_graph(rng)
        masks = create_mask(g, random_rules(rng))
        alpha = float(rng.choice([0.0, 1.0, rng.uniform(0.01, 1.0)]))
        probs = softmax(rng.normal(size=(g.num_entities, g.num_labels)) * 2, axis=1)
        state = advice_gradient(probs, masks, 1)
        gates = compute_gates(state, masks, alpha)
        lo, hi = math.exp(-alpha), math.exp(alpha)
        sign = np.sign(alpha * state.scalar)
        for arr, marked in ((gates.gamma_w, masks.entity_gate_flag),
                            (gates.gamma_c, masks.m_c.astype(bool))):
            cells += arr.size
            violations += int(np.sum((arr < lo) | (arr > hi)))
            s = sign if arr.ndim == 1 else np.broadcast_to(sign[:, None], arr.shape)
            violations += int(np.sum(np.sign(arr[marked] - 1.0) != s[marked]))
            violations += int(np.sum(arr[~marked] != 1.0))
        outside = np.setdiff1d(np.arange(g.num_entities), masks.satisfied)
        violations += int(np.sum(gates.gamma_w[outside] != 1.0))
        violations += int(np.sum(gates.gamma_c[outside] != 1.0))
    record(3, violations == 0, f"{violations} violations over {cells} gate cells")


def test_criterion_4_matcher_oracle():
    rng = np.random.default_rng(4)
    mismatches, rules_checked = 0, 0
    for k in range(200):
        num_labels = 2 if k % 3 == 0 else 3
        g = random_graph(rng, num_labels=num_labels)
        rules = random_rules(rng, num_labels)
        for rule in rules:
            rules_checked += 1
            mismatches += match_rule(g, rule) != brute_force_match(g, rule)
        m, ref = create_mask(g, rules), brute_force_masks(g, rules)
        same = all(np.array_equal(getattr(m, key), ref[key])
                   for key in ("m_w", "m_c", "m_label", "m_avoid", "satisfied"))
        mismatches += not same
    record(4, mismatches == 0,
           f"{mismatches} mismatches over 200 graphs and {rules_checked} rules")


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(1, 80))
        pred, gold = rng.integers(0, k, n), rng.integers(0, k, n)
        f1 = micro_f1(pred, gold, k)
        worst = max(worst, abs(f1 - confusion_f1(pred, gold, k)), abs(f1 - np.mean(pred == gold)))
    gold = rng.random(2000) < 0.35
    ap = auc_pr(rng.random(2000), gold)
    gap = abs(ap - gold.mean())
    record(5, worst < 1e-12 and gap <= 0.05,
           f"max F1 deviation {worst:.1e}; random AUC-PR {ap:.3f} vs positive rate "
           f"{gold.mean():.3f} (gap {gap:.3f} <= 0.05)")


def test_criterion_6_planted_advice_effectiveness():
    g, rules, _ = planted()
    start = time.perf_counter()
    rep = ex.run_sample_curve(planted_spec(fractions=(0.05, 0.1)), g, rules)
    elapsed = time.perf_counter() - start
    gaps = {f: rep.mean_f1(ex.KCLN, f) - rep.mean_f1(ex.VANILLA, f) for f in (0.05, 0.1)}
    detail = "; ".join(f"frac {f}: K-CLN {rep.mean_f1(ex.KCLN, f):.3f} vs vanilla "
                       f"{rep.mean_f1(ex.VANILLA, f):.3f} (gap {gaps[f]:+.3f}, need >= +0.05)"
                       for f in gaps)
    record(6, all(v >= 0.05 for v in gaps.values()) and elapsed < 600,
           f"{detail}; {elapsed:.0f}s")


def test_criterion_7_convergence_speed():
    g, rules, _ = planted()
    rep = ex.run_epoch_curve(planted_spec(), g, rules)
    k = np.mean([r.epochs_to_converge for r in rep.cells(ex.KCLN)])
    v = np.mean([r.epochs_to_converge for r in rep.cells(ex.VANILLA)])
    record(7, k <= 0.5 * v, f"epochs to within 0.01 of final F1: K-CLN {k:.1f} vs vanilla "
                            f"{v:.1f} (need K-CLN <= {0.5 * v:.1f})")


def test_criterion_8_noisy_advice():
    g, rules, _ = planted()
    rep = ex.run_alpha_sweep(planted_spec(corrupt_advice=True), g, rules)
    low, high = rep.mean_f1(ex.KCLN, alpha=0.2), rep.mean_f1(ex.KCLN, alpha=1.0)
    van = rep.mean_f1(ex.VANILLA)
    ok = abs(low - van) <= 0.03 and high < low
    record(8, ok, f"corrupted advice: alpha 0.2 {low:.3f}, alpha 1.0 {high:.3f}, vanilla "
                  f"{van:.3f} (need |a0.2 - vanilla| <= 0.03 and a1.0 < a0.2)")


def test_criterion_9_combined_gradient():
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(900 + k)
        g = random_graph(rng)
        masks = create_mask(g, random_rules(rng))
        probs = softmax(rng.normal(size=(g.num_entities, g.num_labels)), axis=1)
        ids = g.labeled_ids()
        if ids.size == 0:
            continue
        pref = masks.preferred
        adv = ids[pref[ids] >= 0]
        advice = advice_gradient(probs, masks).vector[adv]
        data = data_gradient(probs[adv], g.labels[adv])
        for alpha in (0.0, 0.5, 1.0):
            implemented = -ids.size * combined_output_delta(probs, g, ids, pref, alpha)[adv]
            expected = combined_gradient_diag(data, advice, alpha)
            if adv.size:
                worst = max(worst, float(np.max(np.abs(implemented - expected))))
    record(9, worst <= 1e-12, f"max deviation {worst:.1e} (<= 1e-12)")


def _pubmed_dir():
    d = os.environ.get("KCLN_PUBMED_DIR")
    return Path(d) if d else None


@pytest.mark.skipif(_pubmed_dir() is None, reason="KCLN_PUBMED_DIR not set")
def test_criterion_10_pubmed_trend():
    d = _pubmed_dir()
    spec = ex.ExperimentSpec(nodes=str(d / "nodes.tsv"), edges=str(d / "edges.tsv"),
                             vocab=str(d / "vocab.tsv"), advice=str(d / "advice.adv"),
                             layers=10, hidden=40)
    rep = ex.run_sample_curve(spec)
    gaps = {f: rep.mean_f1(ex.KCLN, f) - rep.mean_f1(ex.VANILLA, f) for f in spec.fractions}
    record(10, all(v >= 0 for v in gaps.values()),
           "; ".join(f"{f}: {v:+.3f}" for f, v in gaps.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
