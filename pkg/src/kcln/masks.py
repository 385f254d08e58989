"""Rule matching and advice masks.

``match_rule`` enumerates every variable binding satisfying a rule body with
a plain backtracking search. ``create_mask`` turns the bindings of a rule
set into binary masks over entities, features, relations and labels, plus
the set of entities touched by advice.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import UNLABELED, KnowledgeGraph
from .rules import PREFER, AttrAtom, PreferenceRule, RuleSet

NO_LABEL = -1


def attribute_holders(g: KnowledgeGraph, atom: AttrAtom, threshold=0.0) -> np.ndarray:
    """Sorted entities whose feature for ``atom`` exceeds ``threshold``."""
    f = g.feature_vocab.get(atom.feature_key())
    if f is None or f >= g.feature_dim:
        return np.zeros(0, dtype=np.int64)
    col = g._adjacency.get("features_csc")
    if col is None:
        col = g.features.tocsc()
        col.sort_indices()
        g._adjacency["features_csc"] = col
    rows = col.indices[col.indptr[f]:col.indptr[f + 1]]
    vals = col.data[col.indptr[f]:col.indptr[f + 1]]
    return np.sort(rows[vals > threshold]).astype(np.int64)


def _in_neighbors(g, rel, j):
    key = ("adjT", rel)
    adj_t = g._adjacency.get(key)
    if adj_t is None:
        adj_t = sp.csr_matrix(g.adjacency(rel).T)
        adj_t.sort_indices()
        g._adjacency[key] = adj_t
    return adj_t.indices[adj_t.indptr[j]:adj_t.indptr[j + 1]]


def match_rule(g: KnowledgeGraph, rule: PreferenceRule, threshold=0.0) -> list[dict]:
    """All bindings (variable -> entity index) satisfying the rule body.

    Results are ordered lexicographically by the entity tuple taken over
    the rule's variables in sorted order.
    """
    variables = rule.variables
    if any(a.rel_name not in g.relations for a in rule.body_rels):
        return []
    domains = {}
    # most selective attribute atoms first; an empty one settles the question
    for atom in sorted(rule.body_attrs, key=lambda a: len(attribute_holders(g, a, threshold))):
        holders = attribute_holders(g, atom, threshold)
        prev = domains.get(atom.var)
        domains[atom.var] = holders if prev is None else np.intersect1d(prev, holders)
        if domains[atom.var].size == 0:
            return []
    all_entities = np.arange(g.num_entities, dtype=np.int64)

    def candidates(var, binding):
        cand = domains.get(var, all_entities)
        for atom in rule.body_rels:
            if atom.var1 == var and atom.var2 in binding:
                cand = np.intersect1d(cand, _in_neighbors(g, atom.rel_name, binding[atom.var2]))
            if atom.var2 == var and atom.var1 in binding:
                cand = np.intersect1d(cand, g.neighbors(binding[atom.var1], atom.rel_name))
        if any(a.var1 == var == a.var2 for a in rule.body_rels):
            keep = []
            for e in cand:
                if all(e in g.neighbors(e, a.rel_name) for a in rule.body_rels
                       if a.var1 == var == a.var2):
                    keep.append(e)
            cand = np.asarray(keep, dtype=np.int64)
        return cand

    def next_var(binding):
        # most constrained: linked to a bound variable, then smallest domain
        best, best_key = None, None
        for v in variables:
            if v in binding:
                continue
            linked = any((a.var1 == v and a.var2 in binding) or (a.var2 == v and a.var1 in binding)
                         for a in rule.body_rels)
            size = len(domains.get(v, all_entities))
            key = (not linked, size, v)
            if best_key is None or key < best_key:
                best, best_key = v, key
        return best

    results = []

    def search(binding):
        if len(binding) == len(variables):
            results.append(dict(binding))
            return
        var = next_var(binding)
        for e in candidates(var, binding):
            binding[var] = int(e)
            search(binding)
            del binding[var]

    search({})
    results.sort(key=lambda b: tuple(b[v] for v in variables))
    return results


@dataclass
class AdviceMasks:
    """Binary advice masks and the satisfied entity set.

    ``m_c`` is keyed by (entity, relation position) following
    ``relation_names``; ``m_c_pairs`` keeps the raw entity x entity matches.
    """

    m_w: np.ndarray
    m_c: np.ndarray
    m_c_pairs: dict
    m_label: np.ndarray
    m_avoid: np.ndarray
    satisfied: np.ndarray
    entity_gate_flag: np.ndarray
    relation_names: tuple
    label_names: tuple

    @property
    def num_entities(self) -> int:
        return self.m_w.shape[0]

    @property
    def preferred(self) -> np.ndarray:
        """Preferred label index per entity, ``-1`` where there is none."""
        has = self.m_label.any(axis=1)
        return np.where(has, np.argmax(self.m_label, axis=1), NO_LABEL)

    def is_empty(self) -> bool:
        return self.satisfied.size == 0

    def equals(self, other: "AdviceMasks") -> bool:
        if set(self.m_c_pairs) != set(other.m_c_pairs):
            return False
        return (np.array_equal(self.m_w, other.m_w) and np.array_equal(self.m_c, other.m_c)
                and np.array_equal(self.m_label, other.m_label)
                and np.array_equal(self.m_avoid, other.m_avoid)
                and np.array_equal(self.satisfied, other.satisfied)
                and np.array_equal(self.entity_gate_flag, other.entity_gate_flag)
                and all((self.m_c_pairs[r] != other.m_c_pairs[r]).nnz == 0
                        for r in self.m_c_pairs))

    def summary(self) -> dict:
        return {
            "satisfied": int(self.satisfied.size),
            "feature_marks": int(self.m_w.sum()),
            "context_marks": int(self.m_c.sum()),
            "preferred": int(self.m_label.any(axis=1).sum()),
            "avoid_only": int((self.m_avoid != NO_LABEL).sum()),
        }


def resolve_labels(votes: dict, g: KnowledgeGraph, known_labels=None) -> tuple:
    """Settle each entity's head hits into one advice label.

    ``votes`` maps entity -> list of ``(label_index, polarity)``. Returns
    ``(preferred, avoided, dropped)``: two int arrays over entities (``-1``
    for none) and the set of entities removed because their advice is tied
    and they carry no visible data label. ``known_labels`` (defaults to the
    graph labels) is what a tie may consult.
    """
    n = g.num_entities
    num_labels = g.num_labels
    data = g.labels if known_labels is None else np.asarray(known_labels)
    preferred = np.full(n, NO_LABEL, dtype=np.int64)
    avoided = np.full(n, NO_LABEL, dtype=np.int64)
    dropped = set()
    for e, hits in votes.items():
        prefer = Counter()
        avoid = Counter()
        for label, polarity in hits:
            if polarity == PREFER:
                prefer[label] += 1
            elif num_labels == 2:
                prefer[1 - label] += 1
            else:
                avoid[label] += 1
        if prefer:
            top = max(prefer.values())
            winners = sorted(lab for lab, c in prefer.items() if c == top)
            if len(winners) == 1:
                preferred[e] = winners[0]
            elif data[e] != UNLABELED:
                preferred[e] = data[e]
            else:
                dropped.add(e)
        elif avoid:
            top = max(avoid.values())
            avoided[e] = min(lab for lab, c in avoid.items() if c == top)
    return preferred, avoided, dropped


def create_mask(g: KnowledgeGraph, rules: RuleSet, threshold=0.0, known_labels=None,
                relation_names=None) -> AdviceMasks:
    """Build the advice masks for every binding of every rule."""
    n = g.num_entities
    rel_names = tuple(relation_names or g.relation_names)
    rel_pos = {r: k for k, r in enumerate(rel_names)}
    m_w = np.zeros((n, g.feature_dim), dtype=bool)
    m_c = np.zeros((n, len(rel_names)), dtype=np.uint8)
    pairs = defaultdict(set)
    votes = defaultdict(list)
    for rule in rules:
        head_labels = [(h, g.label_names.index(h.label)) for h in rule.heads
                       if h.label in g.label_names]
        fired = set()
        for binding in match_rule(g, rule, threshold):
            for atom in rule.body_attrs:
                m_w[binding[atom.var], g.feature_vocab[atom.feature_key()]] = True
            for atom in rule.body_rels:
                i, j = binding[atom.var1], binding[atom.var2]
                if atom.rel_name in rel_pos:
                    m_c[i, rel_pos[atom.rel_name]] = 1
                    m_c[j, rel_pos[atom.rel_name]] = 1
                pairs[atom.rel_name].add((i, j))
            for head, lab in head_labels:
                fired.add((binding[head.var], lab, head.polarity))
        # one vote per rule and head, however many bindings reach the entity
        for e, lab, polarity in fired:
            votes[e].append((lab, polarity))
    votes = {e: sorted(v) for e, v in sorted(votes.items())}
    preferred, avoided, dropped = resolve_labels(votes, g, known_labels)
    for e in dropped:
        m_w[e] = False
        m_c[e] = 0
    m_label = np.zeros((n, g.num_labels))
    has = preferred != NO_LABEL
    m_label[np.flatnonzero(has), preferred[has]] = 1.0
    flag = m_w.any(axis=1)
    satisfied = np.flatnonzero(flag | m_c.any(axis=1))
    m_c_pairs = {}
    for r, ps in pairs.items():
        ps = sorted(p for p in ps if p[0] not in dropped and p[1] not in dropped)
        rows = [p[0] for p in ps]
        cols = [p[1] for p in ps]
        m_c_pairs[r] = sp.csr_matrix((np.ones(len(ps), dtype=np.uint8), (rows, cols)),
                                     shape=(n, n))
    return AdviceMasks(m_w, m_c, m_c_pairs, m_label, avoided, satisfied, flag, rel_names,
                       g.label_names)


def dump_masks(masks: AdviceMasks, path, entity_ids=None) -> None:
    """Write masks as sparse ``entity<TAB>kind:key<TAB>1`` triples."""
    def name(e):
        return entity_ids[e] if entity_ids is not None else str(e)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("entity\tkey\tvalue\n")
        for e, f in zip(*np.nonzero(masks.m_w)):
            fh.write(f"{name(e)}\tfeature:{f}\t1\n")
        for e, r in zip(*np.nonzero(masks.m_c)):
            fh.write(f"{name(e)}\trelation:{masks.relation_names[r]}\t1\n")
        for e, lab in zip(*np.nonzero(masks.m_label)):
            fh.write(f"{name(e)}\tlabel:{masks.label_names[lab]}\t1\n")
        for e in np.flatnonzero(masks.m_avoid != NO_LABEL):
            fh.write(f"{name(e)}\tavoid:{masks.label_names[masks.m_avoid[e]]}\t1\n")
