"""Slow, obviously-correct reference implementations used as test oracles."""

import itertools

import numpy as np

from kcln.graph import UNLABELED, build_graph
from kcln.rules import AVOID, PREFER, AttrAtom, LabelPref, PreferenceRule, RelAtom, RuleSet

ATTRS = ("w0", "w1", "w2")
RELS = ("r0", "r1")
LABELS = ("a", "b", "c")


def brute_force_match(g, rule):
    """Every assignment over ``n ** |vars|`` tuples that satisfies all body atoms."""
    variables = rule.variables
    dense = g.dense_features()
    edge_sets = {r: set(map(tuple, g.relations[r].tolist())) for r in g.relations}
    out = []
    for combo in itertools.product(range(g.num_entities), repeat=len(variables)):
        b = dict(zip(variables, combo))
        ok = True
        for a in rule.body_attrs:
            f = g.feature_vocab.get(a.feature_key())
            ok = ok and f is not None and dense[b[a.var], f] > 0
        for a in rule.body_rels:
            ok = ok and (b[a.var1], b[a.var2]) in edge_sets.get(a.rel_name, set())
        if ok:
            out.append(b)
    return out


def brute_force_masks(g, rules, known_labels=None):
    """Reference mask construction; returns a dict of plain arrays."""
    n, L = g.num_entities, g.num_labels
    rel_names = list(g.relation_names)
    data = g.labels if known_labels is None else known_labels
    m_w = np.zeros((n, g.feature_dim), dtype=bool)
    m_c = np.zeros((n, len(rel_names)), dtype=np.uint8)
    prefer = [dict() for _ in range(n)]
    avoid = [dict() for _ in range(n)]
    for rule in rules:
        hits = set()
        for b in brute_force_match(g, rule):
            for a in rule.body_attrs:
                m_w[b[a.var], g.feature_vocab[a.feature_key()]] = True
            for a in rule.body_rels:
                m_c[b[a.var1], rel_names.index(a.rel_name)] = 1
                m_c[b[a.var2], rel_names.index(a.rel_name)] = 1
            for h in rule.heads:
                hits.add((b[h.var], g.label_names.index(h.label), h.polarity))
        for e, lab, pol in hits:
            if pol == PREFER or L == 2:
                target = lab if pol == PREFER else 1 - lab
                prefer[e][target] = prefer[e].get(target, 0) + 1
            else:
                avoid[e][lab] = avoid[e].get(lab, 0) + 1
    pref = np.full(n, -1)
    avoided = np.full(n, -1)
    for e in range(n):
        if prefer[e]:
            best = max(prefer[e].values())
            top = [k for k, v in prefer[e].items() if v == best]
            if len(top) == 1:
                pref[e] = top[0]
            elif data[e] != UNLABELED:
                pref[e] = data[e]
            else:
                m_w[e] = False
                m_c[e] = 0
        elif avoid[e]:
            best = max(avoid[e].values())
            avoided[e] = min(k for k, v in avoid[e].items() if v == best)
    m_label = np.zeros((n, L))
    for e in range(n):
        if pref[e] >= 0:
            m_label[e, pref[e]] = 1.0
    satisfied = [e for e in range(n) if m_w[e].any() or m_c[e].any()]
    return {"m_w": m_w, "m_c": m_c, "m_label": m_label, "m_avoid": avoided,
            "satisfied": np.array(satisfied, dtype=np.int64)}


def random_graph(rng, max_entities=8, num_labels=3):
    n = int(rng.integers(1, max_entities + 1))
    feats = np.where(rng.random((n, len(ATTRS))) < 0.5, rng.uniform(0.1, 1.0, (n, len(ATTRS))), 0.0)
    edges = {}
    for r in RELS:
        m = int(rng.integers(0, 2 * n + 1))
        edges[r] = [(int(a), int(b)) for a, b in rng.integers(0, n, size=(m, 2))]
    labels = rng.integers(-1, num_labels, size=n)
    vocab = {f"HasWord:{a}": k for k, a in enumerate(ATTRS)}
    symmetric = bool(rng.random() < 0.5)
    return build_graph([f"e{i}" for i in range(n)], feats, labels, LABELS[:num_labels], edges,
                       vocab, symmetric=symmetric)


def random_rule(rng, num_labels=3, max_atoms=3, max_vars=2):
    variables = ["X", "Y"][:int(rng.integers(1, max_vars + 1))]
    k = int(rng.integers(1, max_atoms + 1))
    attrs, rels = [], []
    for _ in range(k):
        if rng.random() < 0.5:
            attrs.append(AttrAtom("HasWord", str(rng.choice(variables)), str(rng.choice(ATTRS))))
        else:
            rels.append(RelAtom(str(rng.choice(RELS)), str(rng.choice(variables)),
                                str(rng.choice(variables))))
    bound = sorted({a.var for a in attrs} | {v for r in rels for v in (r.var1, r.var2)})
    heads = []
    for var in bound:
        if rng.random() < 0.7 or not heads:
            heads.append(LabelPref(var, LABELS[int(rng.integers(num_labels))],
                                   PREFER if rng.random() < 0.7 else AVOID))
    return PreferenceRule(tuple(attrs), tuple(rels), tuple(heads))


def random_rules(rng, num_labels=3):
    return RuleSet(tuple(random_rule(rng, num_labels) for _ in range(int(rng.integers(1, 4)))))


def confusion_f1(pred, gold, num_labels):
    """Micro-F1 from an explicit confusion matrix."""
    cm = np.zeros((num_labels, num_labels), dtype=np.int64)
    for p, y in zip(pred, gold):
        cm[y, p] += 1
    tp = np.trace(cm)
    fp = cm.sum(axis=0).sum() - tp
    fn = cm.sum(axis=1).sum() - tp
    return 2 * tp / (2 * tp + fp + fn)
