"""Multi-relational knowledge graphs with sparse entity features.

File formats (UTF-8, tab separated):

* nodes: ``node_id<TAB>label_name<TAB>idx:val,idx:val,...`` where a label
  of ``?`` marks an unlabeled entity and the feature list may be empty;
* edges: ``relation_name<TAB>src_id<TAB>dst_id``;
* vocab (optional): ``feature_name<TAB>feature_index``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

UNLABELED = -1


class GraphFormatError(ValueError):
    """A malformed line in one of the graph files."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class UnknownNodeError(KeyError):
    """An edge references a node id absent from the nodes file."""

    def __init__(self, path, line_no, node_id):
        super().__init__(f"{path}:{line_no}: unknown node id {node_id!r}")
        self.path = str(path)
        self.line_no = line_no
        self.node_id = node_id

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable graph G = (V, A) with per-entity features and labels.

    ``relations`` maps each relation name to an ``(m, 2)`` int array of
    unique ``(src, dst)`` pairs, sorted lexicographically.
    """

    entity_ids: tuple[str, ...]
    features: sp.csr_matrix
    labels: np.ndarray
    label_names: tuple[str, ...]
    relations: dict[str, np.ndarray]
    feature_vocab: dict[str, int] = field(default_factory=dict)
    _adjacency: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_entities(self) -> int:
        return len(self.entity_ids)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_labels(self) -> int:
        return len(self.label_names)

    @property
    def relation_names(self) -> list[str]:
        return sorted(self.relations)

    def label_index(self, name: str) -> int:
        return self.label_names.index(name)

    def labeled_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def adjacency(self, relation: str) -> sp.csr_matrix:
        """Binary ``N x N`` adjacency, ``A[i, j] = 1`` iff ``(i, j)`` is an edge."""
        if relation not in self.relations:
            raise KeyError(f"unknown relation {relation!r}")
        adj = self._adjacency.get(relation)
        if adj is None:
            edges = self.relations[relation]
            n = self.num_entities
            adj = sp.csr_matrix(
                (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)
            )
            adj.sort_indices()
            self._adjacency[relation] = adj
        return adj

    def neighbors(self, i: int, relation: str) -> np.ndarray:
        """N_r(i): targets of edges leaving ``i`` under ``relation``."""
        adj = self.adjacency(relation)
        if not 0 <= i < self.num_entities:
            raise IndexError(f"entity index {i} out of range")
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]].copy()

    def dense_features(self) -> np.ndarray:
        return self.features.toarray().astype(np.float64)

    def feature_value(self, i: int, f: int) -> float:
        return float(self.features[i, f])


def _dedupe_edges(pairs) -> np.ndarray:
    if not len(pairs):
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.unique(np.asarray(pairs, dtype=np.int64), axis=0)
    return arr


def symmetrize(g: KnowledgeGraph) -> KnowledgeGraph:
    """Return a copy where every edge (i, j) also appears as (j, i)."""
    relations = {
        r: _dedupe_edges(np.concatenate([e, e[:, ::-1]])) for r, e in g.relations.items()
    }
    return KnowledgeGraph(
        entity_ids=g.entity_ids,
        features=g.features,
        labels=g.labels,
        label_names=g.label_names,
        relations=relations,
        feature_vocab=dict(g.feature_vocab),
    )


def build_graph(entity_ids, features, labels, label_names, edges, feature_vocab=None,
                symmetric=True) -> KnowledgeGraph:
    """Assemble a graph from in-memory pieces.

    ``edges`` maps relation name to an iterable of ``(src, dst)`` index pairs.
    ``features`` may be dense or sparse.
    """
    n = len(entity_ids)
    feats = sp.csr_matrix(features, dtype=np.float64)
    if feats.shape[0] != n:
        raise ValueError(f"features have {feats.shape[0]} rows for {n} entities")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError("labels must have one entry per entity")
    if np.any(labels >= len(label_names)) or np.any(labels < UNLABELED):
        raise ValueError("label index out of range")
    relations = {}
    for r, pairs in edges.items():
        arr = _dedupe_edges(list(pairs))
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ValueError(f"edge endpoint out of range in relation {r!r}")
        relations[r] = arr
    g = KnowledgeGraph(
        entity_ids=tuple(entity_ids),
        features=feats,
        labels=labels,
        label_names=tuple(label_names),
        relations=relations,
        feature_vocab=dict(feature_vocab or {}),
    )
    return symmetrize(g) if symmetric else g


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield line_no, line


def _parse_features(path, line_no, text):
    pairs = []
    if not text.strip():
        return pairs
    for item in text.split(","):
        try:
            idx, val = item.split(":")
            pairs.append((int(idx), float(val)))
        except ValueError:
            raise GraphFormatError(path, line_no, f"bad feature entry {item!r}") from None
        if pairs[-1][0] < 0:
            raise GraphFormatError(path, line_no, f"negative feature index in {item!r}")
        if not np.isfinite(pairs[-1][1]) or pairs[-1][1] < 0:
            raise GraphFormatError(path, line_no, f"feature value must be finite and >= 0: {item!r}")
    return pairs


def load_vocab(path) -> dict[str, int]:
    vocab = {}
    for line_no, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise GraphFormatError(path, line_no, "expected 2 tab-separated fields")
        try:
            vocab[parts[0]] = int(parts[1])
        except ValueError:
            raise GraphFormatError(path, line_no, f"bad feature index {parts[1]!r}") from None
    return vocab


def load_graph(nodes_path, edges_path, vocab_path=None, symmetric=True,
               label_names=None, feature_dim=None) -> KnowledgeGraph:
    """Load a graph from the TSV node/edge/vocab files.

    Label names are sorted unless ``label_names`` fixes their order. The
    feature dimension is the largest of the max index seen, the vocab's
    max index, and ``feature_dim``.
    """
    ids, raw_labels, rows = [], [], []
    index = {}
    for line_no, line in _read_lines(nodes_path):
        parts = line.split("\t")
        if len(parts) == 2:
            parts.append("")
        if len(parts) != 3:
            raise GraphFormatError(nodes_path, line_no, "expected 3 tab-separated fields")
        node_id, label, feats = parts
        if not node_id:
            raise GraphFormatError(nodes_path, line_no, "empty node id")
        if node_id in index:
            raise GraphFormatError(nodes_path, line_no, f"duplicate node id {node_id!r}")
        index[node_id] = len(ids)
        ids.append(node_id)
        raw_labels.append(label)
        rows.append(_parse_features(nodes_path, line_no, feats))

    vocab = load_vocab(vocab_path) if vocab_path else {}

    seen_labels = sorted({lab for lab in raw_labels if lab != "?"})
    if label_names is None:
        label_names = seen_labels
    else:
        label_names = list(label_names)
        missing = set(seen_labels) - set(label_names)
        if missing:
            raise ValueError(f"labels not in declared label set: {sorted(missing)}")
    label_pos = {name: k for k, name in enumerate(label_names)}
    labels = np.array([label_pos[lab] if lab != "?" else UNLABELED for lab in raw_labels],
                      dtype=np.int64)

    dim = max([idx + 1 for row in rows for idx, _ in row] + [v + 1 for v in vocab.values()]
              + [feature_dim or 0, 1])
    r_idx = [i for i, row in enumerate(rows) for _ in row]
    c_idx = [idx for row in rows for idx, _ in row]
    vals = [val for row in rows for _, val in row]
    features = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(len(ids), dim), dtype=np.float64)
    features.sum_duplicates()

    edges: dict[str, list] = {}
    for line_no, line in _read_lines(edges_path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphFormatError(edges_path, line_no, "expected 3 tab-separated fields")
        rel, src, dst = parts
        if not rel:
            raise GraphFormatError(edges_path, line_no, "empty relation name")
        for node in (src, dst):
            if node not in index:
                raise UnknownNodeError(edges_path, line_no, node)
        edges.setdefault(rel, []).append((index[src], index[dst]))

    return build_graph(ids, features, labels, label_names, edges, vocab, symmetric=symmetric)


def save_graph(g: KnowledgeGraph, nodes_path, edges_path, vocab_path=None) -> None:
    """Write ``g`` in the same TSV formats ``load_graph`` reads."""
    feats = g.features.tocsr()
    feats.sort_indices()
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for i, node_id in enumerate(g.entity_ids):
            lab = g.label_names[g.labels[i]] if g.labels[i] != UNLABELED else "?"
            start, stop = feats.indptr[i], feats.indptr[i + 1]
            items = ",".join(f"{j}:{float(v)!r}" for j, v in zip(feats.indices[start:stop],
                                                           feats.data[start:stop]))
            fh.write(f"{node_id}\t{lab}\t{items}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for rel in g.relation_names:
            for i, j in g.relations[rel]:
                fh.write(f"{rel}\t{g.entity_ids[i]}\t{g.entity_ids[j]}\n")
    if vocab_path is not None:
        with open(vocab_path, "w", encoding="utf-8") as fh:
            for name, idx in sorted(g.feature_vocab.items(), key=lambda kv: (kv[1], kv[0])):
                fh.write(f"{name}\t{idx}\n")


def write_id_map(g: KnowledgeGraph, path) -> None:
    """Emit the node-id to dense-index mapping used by every output file."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index\tnode_id\n")
        for i, node_id in enumerate(g.entity_ids):
            fh.write(f"{i}\t{node_id}\n")


def graphs_equal(a: KnowledgeGraph, b: KnowledgeGraph) -> bool:
    if (a.entity_ids != b.entity_ids or a.label_names != b.label_names
            or a.feature_vocab != b.feature_vocab or a.features.shape != b.features.shape):
        return False
    if not np.array_equal(a.labels, b.labels):
        return False
    if (a.features != b.features).nnz:
        return False
    if set(a.relations) != set(b.relations):
        return False
    return all(np.array_equal(a.relations[r], b.relations[r]) for r in a.relations)


def average_degree(g: KnowledgeGraph) -> float:
    """Mean total neighbour count per entity, summed over relations."""
    if g.num_entities == 0:
        raise ValueError("average degree of an empty graph is undefined")
    total = sum(len(e) for e in g.relations.values())
    return total / g.num_entities


def context_normalizer(g: KnowledgeGraph) -> float:
    """The constant z: average degree clamped to at least 1."""
    return max(1.0, average_degree(g))


@dataclass(frozen=True)
class DataSplit:
    train_ids: np.ndarray
    test_ids: np.ndarray
    seed: int

    def test_hash(self) -> str:
        return hashlib.sha1(np.sort(self.test_ids).astype(np.int64).tobytes()).hexdigest()[:12]


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(g: KnowledgeGraph, train_fraction: float, seed: int) -> DataSplit:
    """Shuffle the labeled entities under ``seed`` and cut a train/test split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    labeled = g.labeled_ids()
    if labeled.size == 0:
        raise ValueError("graph has no labeled entities")
    order = np.random.default_rng(seed).permutation(labeled)
    n_train = _round_half_up(train_fraction * labeled.size)
    return DataSplit(np.sort(order[:n_train]), np.sort(order[n_train:]), seed)


def subsample(data_split: DataSplit, fraction: float, seed: int) -> np.ndarray:
    """Deterministic subset of the training ids.

    Subsets drawn with one seed are nested: a smaller fraction is always a
    prefix of the same permutation as a larger one.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    train = np.sort(np.asarray(data_split.train_ids))
    order = np.random.default_rng(seed).permutation(train)
    k = max(1, _round_half_up(fraction * train.size)) if train.size else 0
    return np.sort(order[:k])
